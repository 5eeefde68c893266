//! Plain-text weight checkpoints.
//!
//! ```text
//! PCHN v1
//! conn <src> <dst> <rows> <cols>
//! <rows lines of M, cols values each>
//! <cols lines of W, rows values each>
//! <one line of b, rows values>
//! ...
//! ```
//!
//! Values carry 17 significant digits so a dump reloads bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{PchnError, Result};
use crate::format::{fmt_exact, write_atomic};
use crate::network::Network;

pub const MAGIC: &str = "PCHN v1";

/// Weights of one connection as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionWeights {
    pub src: usize,
    pub dst: usize,
    pub m: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

pub fn to_string(net: &Network) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for c in &net.connections {
        let (rows, cols) = c.m.shape();
        writeln!(out, "conn {} {} {} {}", c.src, c.dst, rows, cols).unwrap();
        write_matrix(&mut out, &c.m);
        write_matrix(&mut out, &c.w);
        write_row(&mut out, c.b.iter());
    }
    out
}

fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        write_row(out, row.iter());
    }
}

fn write_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for x in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&fmt_exact(*x));
    }
    out.push('\n');
}

pub fn parse(text: &str) -> Result<Vec<ConnectionWeights>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let bad = |line: usize, msg: &str| PchnError::Checkpoint {
        line,
        msg: msg.to_string(),
    };
    match lines.next() {
        Some((_, MAGIC)) => {}
        Some((n, _)) => return Err(bad(n, "missing 'PCHN v1' header")),
        None => return Err(bad(1, "empty checkpoint")),
    }
    let mut out = Vec::new();
    while let Some((n, header)) = lines.next() {
        if header.is_empty() {
            continue;
        }
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "conn" {
            return Err(bad(n, "expected 'conn <src> <dst> <rows> <cols>'"));
        }
        let nums = fields[1..]
            .iter()
            .map(|f| f.parse::<usize>().map_err(|_| bad(n, "bad integer in conn header")))
            .collect::<Result<Vec<_>>>()?;
        let (src, dst, rows, cols) = (nums[0], nums[1], nums[2], nums[3]);
        let mut read_row = |len: usize| -> Result<Vec<f64>> {
            let (n, line) = lines.next().ok_or_else(|| bad(n, "truncated checkpoint"))?;
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(n, "bad number")))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != len {
                return Err(bad(n, &format!("expected {len} values, found {}", vals.len())));
            }
            Ok(vals)
        };
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for (c, x) in read_row(cols)?.into_iter().enumerate() {
                m[(r, c)] = x;
            }
        }
        let mut w = DMatrix::zeros(cols, rows);
        for r in 0..cols {
            for (c, x) in read_row(rows)?.into_iter().enumerate() {
                w[(r, c)] = x;
            }
        }
        let b = DVector::from_vec(read_row(rows)?);
        out.push(ConnectionWeights { src, dst, m, w, b });
    }
    Ok(out)
}

/// Replaces the weights of `net` with checkpointed ones; topology and shapes
/// must match exactly.
pub fn apply(net: &mut Network, weights: Vec<ConnectionWeights>) -> Result<()> {
    if weights.len() != net.connections.len() {
        return Err(PchnError::InvalidConfig(format!(
            "checkpoint has {} connections, architecture has {}",
            weights.len(),
            net.connections.len()
        )));
    }
    for (i, (c, cw)) in net.connections.iter().zip(&weights).enumerate() {
        if c.src != cw.src || c.dst != cw.dst || c.m.shape() != cw.m.shape() {
            return Err(PchnError::InvalidConfig(format!(
                "checkpoint connection {i} ({} -> {}, {:?}) does not match architecture ({} -> {}, {:?})",
                cw.src,
                cw.dst,
                cw.m.shape(),
                c.src,
                c.dst,
                c.m.shape()
            )));
        }
    }
    for (c, cw) in net.connections.iter_mut().zip(weights) {
        c.m = cw.m;
        c.w = cw.w;
        c.b = cw.b;
    }
    Ok(())
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    write_atomic(path, to_string(net).as_bytes())
}

pub fn load(path: &Path) -> Result<Vec<ConnectionWeights>> {
    let text = std::fs::read_to_string(path).map_err(|e| PchnError::io(path, e))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::network::Hyperparams;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let net = Network::ring(&[3, 2], Activation::Relu, Hyperparams::default(), 1).unwrap();
        let text = to_string(&net);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "PCHN v1");
        assert_eq!(lines[1], "conn 1 0 3 2");
        // 3 rows of M, 2 rows of W, 1 bias row
        assert_eq!(lines[8], "conn 0 1 2 3");
        assert_eq!(lines[2].split_whitespace().count(), 2);
        assert_eq!(lines[5].split_whitespace().count(), 3);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("").is_err());
        assert!(parse("PCHN v2\n").is_err());
        assert!(parse("PCHN v1\nconn 0 0 1 1\n0\n").is_err());
        assert!(parse("PCHN v1\nconn 0 0 1 1\nx\n0\n0\n").is_err());
    }

    #[test]
    fn mismatched_architecture() {
        let a = Network::ring(&[3, 2], Activation::Relu, Hyperparams::default(), 1).unwrap();
        let mut b = Network::single_population(5, Activation::Relu, Hyperparams::default(), 1).unwrap();
        let w = parse(&to_string(&a)).unwrap();
        assert!(apply(&mut b, w).is_err());
    }

    proptest! {
        #[test]
        fn dump_reload_is_bit_exact(seed in any::<u64>(), scale in -1e3f64..1e3) {
            let mut net = Network::ring(&[4, 3, 2], Activation::Tanh, Hyperparams::default(), seed).unwrap();
            for c in &mut net.connections {
                c.m *= scale;
                c.b = DVector::from_fn(c.b.len(), |i, _| scale / (i as f64 + 3.0));
            }
            let text = to_string(&net);
            let mut other = Network::ring(&[4, 3, 2], Activation::Tanh, Hyperparams::default(), 0).unwrap();
            apply(&mut other, parse(&text).unwrap()).unwrap();
            prop_assert_eq!(to_string(&other), text);
            for (a, b) in net.connections.iter().zip(&other.connections) {
                prop_assert!(a.m.iter().zip(b.m.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
                prop_assert!(a.w.iter().zip(b.w.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
                prop_assert!(a.b.iter().zip(b.b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}
