//! Reader for the subset of the MATPOWER case format used here: `baseMVA`,
//! `bus`, `gen`, `branch` and `gencost`. Other `mpc.*` fields are skipped.

use std::collections::HashMap;

use super::{Branch, Bus, CostCoefficients, Generator, GridCase};
use crate::{Error, Result};

// MATPOWER column indices (0-based).
const BUS_I: usize = 0;
const BUS_TYPE: usize = 1;
const PD: usize = 2;
const GEN_BUS: usize = 0;
const GEN_STATUS: usize = 7;
const PMAX: usize = 8;
const PMIN: usize = 9;
const F_BUS: usize = 0;
const T_BUS: usize = 1;
const BR_X: usize = 3;
const RATE_A: usize = 5;
const BR_STATUS: usize = 10;
const MODEL: usize = 0;
const NCOST: usize = 3;
const COST: usize = 4;

const REF_BUS: f64 = 3.0;
const ISOLATED_BUS: f64 = 4.0;
const POLYNOMIAL: f64 = 2.0;

/// A numeric row together with the source line it started on.
#[derive(Debug)]
struct Row {
    line: usize,
    values: Vec<f64>,
}

#[derive(Debug, Default)]
struct Blocks {
    base_mva: Option<f64>,
    matrices: HashMap<String, Vec<Row>>,
}

pub(super) fn parse(text: &str) -> Result<GridCase> {
    let blocks = tokenize(text)?;
    assemble(blocks)
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn tokenize(text: &str) -> Result<Blocks> {
    let mut blocks = Blocks::default();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    while let Some((lineno, raw)) = lines.next() {
        let line = strip_comment(raw);
        let trimmed = line.trim();
        let Some(rest) = trimmed.strip_prefix("mpc.") else {
            continue;
        };
        let Some(eq) = rest.find('=') else {
            let col = raw.find("mpc.").unwrap_or(0) + 1;
            return Err(syntax(lineno, col, "expected '=' after field name"));
        };
        let name = rest[..eq].trim().to_string();
        let value = rest[eq + 1..].trim();
        let value_col = raw.len() - raw.trim_start().len() + 4 + eq + 2;

        if let Some(body) = value.strip_prefix('[') {
            let rows = read_matrix(body, lineno, value_col + 1, &mut lines)?;
            if name == "bus" || name == "gen" || name == "branch" || name == "gencost" {
                blocks.matrices.insert(name, rows);
            } else {
                log::warn!("ignoring MATPOWER field mpc.{name}");
            }
        } else if name == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            let parsed = v
                .parse::<f64>()
                .map_err(|_| syntax(lineno, value_col, format!("invalid number '{v}'")))?;
            blocks.base_mva = Some(parsed);
        } else if name != "version" {
            log::warn!("ignoring MATPOWER field mpc.{name}");
        }
    }
    Ok(blocks)
}

/// Reads matrix rows until the closing bracket. `first` is the text after
/// the opening bracket on the current line.
fn read_matrix<'a>(
    first: &str,
    first_line: usize,
    first_col: usize,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let mut current: Option<Row> = None;

    let mut feed = |segment: &str, lineno: usize, col0: usize| -> Result<bool> {
        let mut token_start: Option<usize> = None;
        let finish = |start: usize, end: usize, current: &mut Option<Row>| -> Result<()> {
            let tok = &segment[start..end];
            let v = tok.parse::<f64>().map_err(|_| {
                syntax(lineno, col0 + start, format!("invalid number '{tok}'"))
            })?;
            current
                .get_or_insert_with(|| Row {
                    line: lineno,
                    values: Vec::new(),
                })
                .values
                .push(v);
            Ok(())
        };
        for (i, ch) in segment.char_indices() {
            let delimiter = ch.is_whitespace() || matches!(ch, ',' | ';' | ']');
            if !delimiter {
                token_start.get_or_insert(i);
                continue;
            }
            if let Some(start) = token_start.take() {
                finish(start, i, &mut current)?;
            }
            if ch == ';' || ch == ']' {
                if let Some(r) = current.take() {
                    rows.push(r);
                }
                if ch == ']' {
                    return Ok(true);
                }
            }
        }
        if let Some(start) = token_start {
            finish(start, segment.len(), &mut current)?;
        }
        // A newline also terminates a row.
        if let Some(r) = current.take() {
            rows.push(r);
        }
        Ok(false)
    };

    if feed(first, first_line, first_col)? {
        return Ok(rows);
    }
    for (lineno, raw) in lines.by_ref() {
        let line = strip_comment(raw);
        if feed(line, lineno, 1)? {
            return Ok(rows);
        }
    }
    Err(syntax(first_line, first_col, "unterminated matrix, missing ']'"))
}

fn column(row: &Row, idx: usize, block: &str) -> Result<f64> {
    row.values.get(idx).copied().ok_or_else(|| {
        syntax(
            row.line,
            1,
            format!(
                "mpc.{block} row has {} columns, need at least {}",
                row.values.len(),
                idx + 1
            ),
        )
    })
}

fn as_id(v: f64, row: &Row, block: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(syntax(row.line, 1, format!("mpc.{block}: bus id {v} is not an integer")))
    }
}

fn assemble(mut blocks: Blocks) -> Result<GridCase> {
    let base_mva = blocks
        .base_mva
        .ok_or_else(|| Error::validation("missing mpc.baseMVA"))?;
    let mut take = |name: &str| {
        blocks
            .matrices
            .remove(name)
            .ok_or_else(|| Error::validation(format!("missing mpc.{name}")))
    };
    let bus_rows = take("bus")?;
    let gen_rows = take("gen")?;
    let branch_rows = take("branch")?;
    let cost_rows = take("gencost")?;

    let mut buses = Vec::new();
    let mut index = HashMap::new();
    let mut slack = None;
    for row in &bus_rows {
        let id = as_id(column(row, BUS_I, "bus")?, row, "bus")?;
        let kind = column(row, BUS_TYPE, "bus")?;
        if kind == ISOLATED_BUS {
            log::warn!("skipping isolated bus {id}");
            continue;
        }
        if index.insert(id, buses.len()).is_some() {
            return Err(Error::validation(format!("bus id {id} appears twice")));
        }
        if kind == REF_BUS {
            if slack.is_some() {
                return Err(Error::validation("more than one reference bus (type 3)"));
            }
            slack = Some(buses.len());
        }
        buses.push(Bus {
            id,
            load_mw: column(row, PD, "bus")?,
        });
    }
    let slack_bus = slack.ok_or_else(|| Error::validation("no reference bus (type 3)"))?;
    let lookup = |id: usize, what: String| {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::validation(format!("{what} refers to unknown bus {id}")))
    };

    if cost_rows.len() < gen_rows.len() {
        return Err(Error::validation(format!(
            "mpc.gencost has {} rows but mpc.gen has {}",
            cost_rows.len(),
            gen_rows.len()
        )));
    }
    let mut generators = Vec::new();
    for (k, (row, cost)) in gen_rows.iter().zip(&cost_rows).enumerate() {
        if column(row, GEN_STATUS, "gen")? <= 0.0 {
            log::warn!("skipping out-of-service generator {k}");
            continue;
        }
        let bus = lookup(as_id(column(row, GEN_BUS, "gen")?, row, "gen")?, format!("generator {k}"))?;
        generators.push(Generator {
            bus,
            p_min_mw: column(row, PMIN, "gen")?,
            p_max_mw: column(row, PMAX, "gen")?,
            cost: polynomial_cost(cost, k)?,
        });
    }

    let mut branches = Vec::new();
    for (k, row) in branch_rows.iter().enumerate() {
        let status = row.values.get(BR_STATUS).copied().unwrap_or(1.0);
        if status <= 0.0 {
            log::warn!("skipping out-of-service branch {k}");
            continue;
        }
        let from = lookup(as_id(column(row, F_BUS, "branch")?, row, "branch")?, format!("branch {k}"))?;
        let to = lookup(as_id(column(row, T_BUS, "branch")?, row, "branch")?, format!("branch {k}"))?;
        branches.push(Branch {
            from,
            to,
            x: column(row, BR_X, "branch")?,
            rate_mw: column(row, RATE_A, "branch")?,
            rate_contingency_mw: None,
        });
    }

    Ok(GridCase {
        base_mva,
        buses,
        branches,
        generators,
        slack_bus,
    })
}

fn polynomial_cost(row: &Row, k: usize) -> Result<CostCoefficients> {
    if column(row, MODEL, "gencost")? != POLYNOMIAL {
        return Err(Error::validation(format!(
            "generator {k}: only polynomial cost (model 2) is supported"
        )));
    }
    let n = column(row, NCOST, "gencost")?;
    if !(1.0..=3.0).contains(&n) || n.fract() != 0.0 {
        return Err(Error::validation(format!(
            "generator {k}: polynomial cost must have 1 to 3 coefficients (got {n})"
        )));
    }
    let n = n as usize;
    let mut coeffs = [0.0; 3];
    for i in 0..n {
        // Highest order first in the file.
        coeffs[3 - n + i] = column(row, COST + i, "gencost")?;
    }
    Ok(CostCoefficients {
        quadratic: coeffs[0],
        linear: coeffs[1],
        constant: coeffs[2],
    })
}
