//! Draw storage: a compact binary archive and a long-format CSV export.
//!
//! Binary layout (all integers `u64`, all reals `f64`, little-endian):
//!
//! ```text
//! magic    8 bytes  "GRDRAWS1"
//! header   6 × u64  version, n_draws, n_ages, state_dim, n_populations, n_missing
//! chain    n_draws × u64
//! theta    n_draws × (n_ages + 1) × state_dim   row-major per draw
//! phi      n_draws × J × J                      row-major per draw
//! y_miss   n_draws × n_missing
//! y_rep    n_draws × n_ages × J                 row-major per draw
//! c_last   n_draws × state_dim × state_dim      row-major per draw
//! ```

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{DrawsMeta, PosteriorDraws};
use crate::distributions::spd_inverse;
use crate::error::{Error, Result};
use crate::model::DlmSpec;

pub const MAGIC: &[u8; 8] = b"GRDRAWS1";
pub const VERSION: u64 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::io("draw archive", e)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn put_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_all(&m[(r, c)].to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| truncated())?;
    Ok(u64::from_le_bytes(b))
}

fn get_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows, cols);
    let mut b = [0u8; 8];
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut b).map_err(|_| truncated())?;
            m[(i, j)] = f64::from_le_bytes(b);
        }
    }
    Ok(m)
}

fn truncated() -> Error {
    Error::Parse {
        line: 0,
        message: "draw archive is truncated".into(),
    }
}

pub fn write_binary<W: Write>(draws: &PosteriorDraws, mut w: W) -> Result<()> {
    w.write_all(MAGIC).map_err(io_err)?;
    for v in [
        VERSION,
        draws.len() as u64,
        draws.n_ages() as u64,
        draws.state_dim as u64,
        draws.n_populations() as u64,
        draws.missing_cells.len() as u64,
    ] {
        put_u64(&mut w, v)?;
    }
    for &c in &draws.chain {
        put_u64(&mut w, c as u64)?;
    }
    for m in draws.theta.iter().chain(&draws.phi) {
        put_matrix(&mut w, m)?;
    }
    for m in &draws.y_miss {
        put_matrix(&mut w, &DMatrix::from_row_slice(1, m.len(), m.as_slice()))?;
    }
    for m in draws.y_rep.iter().chain(&draws.c_last) {
        put_matrix(&mut w, m)?;
    }
    w.flush().map_err(io_err)
}

/// Reads an archive back. Labels (populations, ages, missing cells) and the
/// run metadata are not part of the binary and must be supplied.
pub fn read_binary<R: Read>(
    mut r: R,
    populations: Vec<String>,
    ages: Vec<i64>,
    missing_cells: Vec<(usize, usize)>,
    meta: DrawsMeta,
) -> Result<PosteriorDraws> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| truncated())?;
    if &magic != MAGIC {
        return Err(Error::Parse {
            line: 0,
            message: "not a draw archive (bad magic)".into(),
        });
    }
    let version = get_u64(&mut r)?;
    if version != VERSION {
        return Err(Error::Parse {
            line: 0,
            message: format!("unsupported draw archive version {version}"),
        });
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = get_u64(&mut r)? as usize;
    }
    let [n_draws, n_ages, p, j, n_missing] = dims;
    if n_ages != ages.len() || j != populations.len() || n_missing != missing_cells.len() {
        return Err(Error::Schema(format!(
            "archive dimensions ({n_ages} ages, {j} populations, {n_missing} missing) disagree with the manifest"
        )));
    }
    let chain = (0..n_draws)
        .map(|_| get_u64(&mut r).map(|c| c as usize))
        .collect::<Result<Vec<_>>>()?;
    let block = |r: &mut R, rows, cols| {
        (0..n_draws)
            .map(|_| get_matrix(r, rows, cols))
            .collect::<Result<Vec<_>>>()
    };
    let theta = block(&mut r, n_ages + 1, p)?;
    let phi = block(&mut r, j, j)?;
    let y_miss = block(&mut r, 1, n_missing)?
        .into_iter()
        .map(|m| DVector::from_row_slice(m.as_slice()))
        .collect();
    let y_rep = block(&mut r, n_ages, j)?;
    let c_last = block(&mut r, p, p)?;
    let v = phi.iter().map(spd_inverse).collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        populations,
        ages,
        state_dim: p,
        missing_cells,
        theta,
        phi,
        v,
        y_miss,
        y_rep,
        c_last,
        chain,
        meta,
    })
}

#[derive(Serialize)]
struct LongRow<'a> {
    draw: usize,
    chain: usize,
    age: Option<i64>,
    component: &'a str,
    value: f64,
}

/// Long-format export `draw,chain,age,component,value`: every state
/// component at every age, then the elements of `V` (no age).
pub fn write_long_csv<W: Write>(draws: &PosteriorDraws, spec: &DlmSpec, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let labels = spec.state_labels(&draws.populations);
    let x0 = draws.ages[0] - 1;
    let ser = |e: csv::Error| Error::Numerical(format!("csv serialization failed: {e}"));
    let mut v_labels = Vec::new();
    for a in 0..draws.n_populations() {
        for b in a..draws.n_populations() {
            v_labels.push((a, b, format!("v[{},{}]", draws.populations[a], draws.populations[b])));
        }
    }
    for d in 0..draws.len() {
        for t in 0..=draws.n_ages() {
            for (i, label) in labels.iter().enumerate() {
                w.serialize(LongRow {
                    draw: d,
                    chain: draws.chain[d],
                    age: Some(x0 + t as i64),
                    component: label,
                    value: draws.theta[d][(t, i)],
                })
                .map_err(ser)?;
            }
        }
        for (a, b, label) in &v_labels {
            w.serialize(LongRow {
                draw: d,
                chain: draws.chain[d],
                age: None,
                component: label,
                value: draws.v[d][(*a, *b)],
            })
            .map_err(ser)?;
        }
    }
    w.flush().map_err(io_err)
}
