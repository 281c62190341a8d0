//! Case file grammar.
//!
//! ```text
//! [system]
//! base_mva 100
//!
//! [bus]
//! # id  kind (generator|load)
//! 1  generator
//!
//! [branch]
//! # from  to  susceptance(pu)
//! 1  2  71.9
//!
//! [generator]
//! # bus  J  D  e_T  T_u  T_g  K_t  r  capacity(pu)
//! 1  4.4  1.2  1  0.3  0.25  1  0.04  1.92
//!
//! [load]
//! # bus  J  D  demand(pu)
//! 3  3.4  1.3  1.8
//! ```
//!
//! `#` comments and blank lines are ignored; all quantities are per-unit on
//! the declared base. Serialization and parsing are exact inverses.

use std::path::Path;

use super::{Branch, Bus, BusKind, Generator, GridCase, Load, ModelError, Result};
use crate::textio::{fmt_f64, parse_sections, Section};

pub fn parse_case(path: impl AsRef<Path>) -> Result<GridCase> {
    let text = std::fs::read_to_string(path)?;
    parse_case_str(&text)
}

pub fn parse_case_str(text: &str) -> Result<GridCase> {
    let sections = parse_sections(text)?;
    let mut base_mva = None;
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut generators = Vec::new();
    let mut loads = Vec::new();

    for section in &sections {
        match section.name.as_str() {
            "system" => parse_system(section, &mut base_mva)?,
            "bus" => {
                for rec in &section.records {
                    rec.expect_len(2, "bus")?;
                    let id = rec.u32(0, "bus id")?;
                    let kind = match rec.str(1, "kind")? {
                        "generator" => BusKind::Generator,
                        "load" => BusKind::Load,
                        other => {
                            return Err(ModelError::Parse {
                                line: rec.line,
                                message: format!("unknown bus kind `{other}`"),
                            })
                        }
                    };
                    buses.push(Bus { id, kind });
                }
            }
            "branch" => {
                for rec in &section.records {
                    rec.expect_len(3, "branch")?;
                    branches.push(Branch {
                        from: rec.u32(0, "from bus")?,
                        to: rec.u32(1, "to bus")?,
                        susceptance: rec.f64(2, "susceptance")?,
                    });
                }
            }
            "generator" => {
                for rec in &section.records {
                    rec.expect_len(9, "generator")?;
                    generators.push(Generator {
                        bus: rec.u32(0, "bus")?,
                        inertia: rec.f64(1, "inertia J")?,
                        damping: rec.f64(2, "damping D")?,
                        valve_gain: rec.f64(3, "valve gain e_T")?,
                        turbine_time: rec.f64(4, "turbine time T_u")?,
                        governor_time: rec.f64(5, "governor time T_g")?,
                        turbine_gain: rec.f64(6, "turbine gain K_t")?,
                        droop: rec.f64(7, "droop r")?,
                        capacity: rec.f64(8, "capacity")?,
                    });
                }
            }
            "load" => {
                for rec in &section.records {
                    rec.expect_len(4, "load")?;
                    loads.push(Load {
                        bus: rec.u32(0, "bus")?,
                        inertia: rec.f64(1, "inertia J")?,
                        damping: rec.f64(2, "damping D")?,
                        demand: rec.f64(3, "demand")?,
                    });
                }
            }
            other => {
                return Err(ModelError::Parse {
                    line: section.line,
                    message: format!("unknown section [{other}] in case file"),
                })
            }
        }
    }

    let base_mva = base_mva.ok_or_else(|| ModelError::Parse {
        line: 1,
        message: "missing [system] section with base_mva".into(),
    })?;
    let case = GridCase { base_mva, buses, branches, generators, loads };
    case.validate()?;
    Ok(case)
}

fn parse_system(section: &Section, base_mva: &mut Option<f64>) -> Result<()> {
    for rec in &section.records {
        match rec.str(0, "key")? {
            "base_mva" => {
                rec.expect_len(2, "base_mva")?;
                *base_mva = Some(rec.f64(1, "base_mva")?);
            }
            other => {
                return Err(ModelError::Parse {
                    line: rec.line,
                    message: format!("unknown [system] key `{other}`"),
                })
            }
        }
    }
    Ok(())
}

pub fn serialize_case(case: &GridCase) -> String {
    let mut out = String::new();
    out.push_str("[system]\n");
    out.push_str(&format!("base_mva {}\n", fmt_f64(case.base_mva)));

    out.push_str("\n[bus]\n# id  kind\n");
    for bus in &case.buses {
        let kind = match bus.kind {
            BusKind::Generator => "generator",
            BusKind::Load => "load",
        };
        out.push_str(&format!("{}  {}\n", bus.id, kind));
    }

    out.push_str("\n[branch]\n# from  to  susceptance(pu)\n");
    for br in &case.branches {
        out.push_str(&format!("{}  {}  {}\n", br.from, br.to, fmt_f64(br.susceptance)));
    }

    out.push_str("\n[generator]\n# bus  J  D  e_T  T_u  T_g  K_t  r  capacity(pu)\n");
    for g in &case.generators {
        out.push_str(&format!(
            "{}  {}  {}  {}  {}  {}  {}  {}  {}\n",
            g.bus,
            fmt_f64(g.inertia),
            fmt_f64(g.damping),
            fmt_f64(g.valve_gain),
            fmt_f64(g.turbine_time),
            fmt_f64(g.governor_time),
            fmt_f64(g.turbine_gain),
            fmt_f64(g.droop),
            fmt_f64(g.capacity)
        ));
    }

    out.push_str("\n[load]\n# bus  J  D  demand(pu)\n");
    for l in &case.loads {
        out.push_str(&format!(
            "{}  {}  {}  {}\n",
            l.bus,
            fmt_f64(l.inertia),
            fmt_f64(l.damping),
            fmt_f64(l.demand)
        ));
    }
    out
}

#[cfg(test)]
pub(crate) fn two_bus_case() -> GridCase {
    parse_case_str(
        "[system]\nbase_mva 100\n\
         [bus]\n1 generator\n2 load\n\
         [branch]\n1 2 10\n\
         [generator]\n1 5 1.2 1 0.3 0.25 1 0.04 2\n\
         [load]\n2 2.5 0.9 1\n",
    )
    .unwrap()
}
