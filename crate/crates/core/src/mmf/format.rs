//! Versioned flat text format for [`MmfFactorization`].
//!
//! ```text
//! mmf-factorization v1
//! n <n>
//! error_sq <f64>
//! flags <count> [<flag> ...]
//! stage_ends <count> [<usize> ...]
//! rotations <count>
//! <level> <k> <i_1> .. <i_k> <b_11> .. <b_kk>      (one line each)
//! retirements <count>
//! <index> <after_rotations> <stage> <h_ii>         (one line each)
//! core <m> [<index> ...]
//! <m values>                                       (one row per line)
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so reading a file back
//! reproduces every value bit for bit.

use nalgebra::DMatrix;

use super::{CoreDiagonal, KPointRotation, MmfFactorization, Retirement};
use crate::error::{Error, Result};
use crate::sparse::IndexSet;

pub const MAGIC: &str = "mmf-factorization v1";

fn float(x: f64) -> String {
    format!("{x:e}")
}

pub(super) fn write(f: &MmfFactorization) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(MAGIC.to_string());
    line(format!("n {}", f.n));
    line(format!("error_sq {}", float(f.recorded_error_sq)));
    let mut flags = format!("flags {}", f.flags.len());
    for fl in &f.flags {
        flags.push(' ');
        flags.push_str(fl);
    }
    line(flags);
    let mut ends = format!("stage_ends {}", f.stage_ends.len());
    for e in &f.stage_ends {
        ends.push_str(&format!(" {e}"));
    }
    line(ends);
    line(format!("rotations {}", f.rotations.len()));
    for r in &f.rotations {
        let mut s = format!("{} {}", r.level, r.k());
        for i in &r.indices {
            s.push_str(&format!(" {i}"));
        }
        for b in &r.block {
            s.push(' ');
            s.push_str(&float(*b));
        }
        line(s);
    }
    line(format!("retirements {}", f.retirements.len()));
    for (r, &(i, d)) in f.retirements.iter().zip(&f.h.diagonal) {
        debug_assert_eq!(r.index, i);
        line(format!("{} {} {} {}", r.index, r.after_rotations, r.stage, float(d)));
    }
    let m = f.h.core_indices.len();
    let mut core = format!("core {m}");
    for i in f.h.core_indices.iter() {
        core.push_str(&format!(" {i}"));
    }
    line(core);
    for p in 0..m {
        let row: Vec<String> = (0..m).map(|q| float(f.h.core[(p, q)])).collect();
        line(row.join(" "));
    }
    line("end".to_string());
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        for (no, l) in self.inner.by_ref() {
            let t = l.trim();
            if !t.is_empty() {
                return Ok((no + 1, t));
            }
        }
        Err(Error::Format("unexpected end of input".into()))
    }

    /// Line starting with `key`; returns the remaining tokens.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (no, l) = self.next()?;
        let mut tok = l.split_whitespace();
        if tok.next() != Some(key) {
            return Err(Error::Format(format!("line {no}: expected `{key}`")));
        }
        Ok((no, tok.collect()))
    }
}

fn parse<T: std::str::FromStr>(no: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("line {no}: cannot parse `{s}`")))
}

fn counted<'a>(no: usize, tok: &[&'a str]) -> Result<(usize, Vec<&'a str>)> {
    let count: usize = parse(no, tok.first().ok_or_else(|| Error::Format(format!("line {no}: missing count")))?)?;
    let rest = tok[1..].to_vec();
    if rest.len() != count {
        return Err(Error::Format(format!("line {no}: expected {count} items, found {}", rest.len())));
    }
    Ok((count, rest))
}

pub(super) fn read(text: &str) -> Result<MmfFactorization> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (no, magic) = lines.next()?;
    if magic != MAGIC {
        return Err(Error::Format(format!("line {no}: unsupported header `{magic}`")));
    }
    let (no, t) = lines.keyed("n")?;
    let n: usize = parse(no, t.first().copied().unwrap_or(""))?;
    let (no, t) = lines.keyed("error_sq")?;
    let error_sq: f64 = parse(no, t.first().copied().unwrap_or(""))?;
    let (no, t) = lines.keyed("flags")?;
    let flags = counted(no, &t)?.1.into_iter().map(str::to_string).collect();
    let (no, t) = lines.keyed("stage_ends")?;
    let stage_ends = counted(no, &t)?.1.into_iter().map(|s| parse(no, s)).collect::<Result<Vec<usize>>>()?;

    let (no, t) = lines.keyed("rotations")?;
    let nrot: usize = parse(no, t.first().copied().unwrap_or(""))?;
    let mut rotations = Vec::with_capacity(nrot);
    for _ in 0..nrot {
        let (no, l) = lines.next()?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() < 2 {
            return Err(Error::Format(format!("line {no}: truncated rotation")));
        }
        let level: usize = parse(no, tok[0])?;
        let k: usize = parse(no, tok[1])?;
        if tok.len() != 2 + k + k * k {
            return Err(Error::Format(format!("line {no}: rotation of order {k} has wrong length")));
        }
        let indices = tok[2..2 + k].iter().map(|s| parse(no, s)).collect::<Result<Vec<usize>>>()?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Format(format!("line {no}: index {bad} out of range")));
        }
        let block = tok[2 + k..].iter().map(|s| parse(no, s)).collect::<Result<Vec<f64>>>()?;
        rotations.push(KPointRotation { indices, block, level });
    }

    let (no, t) = lines.keyed("retirements")?;
    let nret: usize = parse(no, t.first().copied().unwrap_or(""))?;
    let mut retirements = Vec::with_capacity(nret);
    let mut diagonal = Vec::with_capacity(nret);
    for _ in 0..nret {
        let (no, l) = lines.next()?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(Error::Format(format!("line {no}: malformed retirement")));
        }
        let index: usize = parse(no, tok[0])?;
        if index >= n {
            return Err(Error::Format(format!("line {no}: index {index} out of range")));
        }
        retirements.push(Retirement { index, after_rotations: parse(no, tok[1])?, stage: parse(no, tok[2])? });
        diagonal.push((index, parse(no, tok[3])?));
    }

    let (no, t) = lines.keyed("core")?;
    let (m, idx) = counted(no, &t)?;
    let idx = idx.into_iter().map(|s| parse(no, s)).collect::<Result<Vec<usize>>>()?;
    let core_indices = IndexSet::new(idx, n).map_err(|e| Error::Format(format!("line {no}: {e}")))?;
    let mut core = DMatrix::zeros(m, m);
    for p in 0..m {
        let (no, l) = lines.next()?;
        let vals = l.split_whitespace().map(|s| parse(no, s)).collect::<Result<Vec<f64>>>()?;
        if vals.len() != m {
            return Err(Error::Format(format!("line {no}: core row has {} values, expected {m}", vals.len())));
        }
        for (q, v) in vals.into_iter().enumerate() {
            core[(p, q)] = v;
        }
    }
    let (no, l) = lines.next()?;
    if l != "end" {
        return Err(Error::Format(format!("line {no}: expected `end`")));
    }
    if m + nret != n {
        return Err(Error::Format(format!("core ({m}) and retired ({nret}) sizes do not add up to n = {n}")));
    }
    Ok(MmfFactorization {
        n,
        rotations,
        retirements,
        stage_ends,
        h: CoreDiagonal { core_indices, core, diagonal },
        recorded_error_sq: error_sq,
        flags,
    })
}
