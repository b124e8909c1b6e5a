//! Named kernel families and the text grammar that selects them.
//!
//! ```text
//! spec    := name [ ":" param { "," param } ]
//! param   := key "=" value
//! value   := number | "[" number { "," number } "]"
//!
//! zero
//! volterra[:b=<r>]                  b·1_{s<t}·I_d             (b defaults to 1)
//! rank1:b=<r>[,n=<int>]             b·h_n′(t)h_n′(s)†          (n defaults to 1)
//! rank2:b=<r>,c=<r>[,part=1|2]      the pair κ₁ (part 1) / κ₂ (part 2)
//! remark12:...                      alias of rank2
//! remark_gencv:b1=<r>,b2=<r>        b₁·h₁′⊗h₁′ + b₂·h₂′⊗h₂′
//! expdiag:p=[<r>,...]               1_{s<t}·diag(e^{(t−s)p_k}), d = len(p)
//! const_phi:c=<r>                   κ_φ for φ ≡ c·I_d
//! ```
//!
//! The directions `h_n′(t) = e_n(t)·u₁` use the first coordinate axis `u₁` of
//! `R^d` and the cosine family `e_n(t) = √(2/T)cos((n−½)πt/T)` sampled at cell
//! midpoints. At midpoints the sampled family is exactly orthonormal under the
//! `Δ`-weighted sum (it is the DCT-IV basis), so rank-k spectra carry no
//! quadrature error.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{kappa_from_phi, MatrixKernel};

pub const GRAMMAR: &str = "zero | volterra[:b=<r>] | rank1:b=<r>[,n=<int>] | rank2:b=<r>,c=<r>[,part=1|2] | \
remark12:b=<r>,c=<r>[,part=1|2] | remark_gencv:b1=<r>,b2=<r> | expdiag:p=[<r>,...] | const_phi:c=<r>";

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Zero,
    Volterra { scale: f64 },
    Rank1 { b: f64, n: usize },
    Rank2 { b: f64, c: f64, part: u8 },
    GenCv { b1: f64, b2: f64 },
    ExpDiag { p: Vec<f64> },
    ConstPhi { c: f64 },
}

/// `e_n` at the midpoint of every cell, `n ≥ 1`.
pub fn trig_basis(grid: &TimeGrid, n: usize) -> Vec<f64> {
    let t = grid.horizon();
    let norm = (2.0 / t).sqrt();
    let freq = (n as f64 - 0.5) * std::f64::consts::PI / t;
    (0..grid.n_steps())
        .map(|i| norm * (freq * grid.midpoint(i)).cos())
        .collect()
}

/// `Σ_k coeffs[k] · e_{p_k}(t) e_{q_k}(s)` placed on the `(0,0)` entry.
fn basis_combination(grid: TimeGrid, dim: usize, terms: &[(f64, usize, usize)], symmetric: bool) -> Result<MatrixKernel> {
    let max_n = terms.iter().map(|&(_, p, q)| p.max(q)).max().unwrap_or(1);
    let basis: Vec<Vec<f64>> = (1..=max_n).map(|n| trig_basis(&grid, n)).collect();
    let nd = grid.n_steps() * dim;
    let mut values = DMatrix::zeros(nd, nd);
    for &(coef, p, q) in terms {
        let (ep, eq) = (&basis[p - 1], &basis[q - 1]);
        for i in 0..grid.n_steps() {
            for j in 0..grid.n_steps() {
                values[(i * dim, j * dim)] += coef * ep[i] * eq[j];
            }
        }
    }
    if symmetric {
        Ok(MatrixKernel::symmetrized(grid, dim, values))
    } else {
        MatrixKernel::from_values(grid, dim, values, false)
    }
}

/// The two kernels `κ₁ = b{h₁′⊗h₁′ + h₂′⊗h₂′}` and `κ₂ = c{h₁′(s)⊗h₂′(t) − h₂′(s)⊗h₁′(t)}`,
/// whose `η` coincide when `1 + c² = (1 + b)²`.
pub fn remark_pair(grid: TimeGrid, dim: usize, b: f64, c: f64) -> Result<(MatrixKernel, MatrixKernel)> {
    let k1 = basis_combination(grid, dim, &[(b, 1, 1), (b, 2, 2)], true)?;
    let k2 = basis_combination(grid, dim, &[(c, 2, 1), (-c, 1, 2)], false)?;
    Ok((k1, k2))
}

impl KernelSpec {
    pub fn build(&self, grid: TimeGrid, dim: usize) -> Result<MatrixKernel> {
        match self {
            KernelSpec::Zero => MatrixKernel::zeros(grid, dim),
            KernelSpec::Volterra { scale } => {
                let scale = *scale;
                MatrixKernel::from_fn(grid, dim, false, move |i, j, a, b| {
                    if j < i && a == b {
                        scale
                    } else {
                        0.0
                    }
                })
            }
            KernelSpec::Rank1 { b, n } => basis_combination(grid, dim, &[(*b, *n, *n)], true),
            KernelSpec::Rank2 { b, c, part } => {
                let (k1, k2) = remark_pair(grid, dim, *b, *c)?;
                Ok(if *part == 1 { k1 } else { k2 })
            }
            KernelSpec::GenCv { b1, b2 } => basis_combination(grid, dim, &[(*b1, 1, 1), (*b2, 2, 2)], true),
            KernelSpec::ExpDiag { p } => {
                if p.len() != dim {
                    return Err(invalid(format!(
                        "expdiag has {} rates but dimension is {dim}",
                        p.len()
                    )));
                }
                let p = p.clone();
                MatrixKernel::from_fn(grid, dim, false, move |i, j, a, b| {
                    if j < i && a == b {
                        ((grid.node(i) - grid.node(j)) * p[a]).exp()
                    } else {
                        0.0
                    }
                })
            }
            KernelSpec::ConstPhi { .. } => Ok(kappa_from_phi(&self.phi(grid, dim)?.expect("const_phi has φ"))),
        }
    }

    /// The underlying `φ` for specs defined through `κ_φ`.
    pub fn phi(&self, grid: TimeGrid, dim: usize) -> Result<Option<MatrixKernel>> {
        match self {
            KernelSpec::ConstPhi { c } => {
                let c = *c;
                MatrixKernel::from_fn(grid, dim, false, move |_, _, a, b| if a == b { c } else { 0.0 }).map(Some)
            }
            _ => Ok(None),
        }
    }

    /// Interprets the spec as `φ` for the Cameron–Martin scenario: `const_phi`
    /// yields its constant, every other family is taken as `φ` directly.
    pub fn as_phi(&self, grid: TimeGrid, dim: usize) -> Result<MatrixKernel> {
        match self.phi(grid, dim)? {
            Some(phi) => Ok(phi),
            None => self.build(grid, dim),
        }
    }

    /// Single-direction eigenvalue, when the kernel is `a·h_n′⊗h_n′`.
    pub fn rank_one_coefficient(&self) -> Option<f64> {
        match self {
            KernelSpec::Rank1 { b, .. } => Some(*b),
            KernelSpec::Zero => Some(0.0),
            _ => None,
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Zero => write!(f, "zero"),
            KernelSpec::Volterra { scale } => write!(f, "volterra:b={scale}"),
            KernelSpec::Rank1 { b, n } => write!(f, "rank1:b={b},n={n}"),
            KernelSpec::Rank2 { b, c, part } => write!(f, "rank2:b={b},c={c},part={part}"),
            KernelSpec::GenCv { b1, b2 } => write!(f, "remark_gencv:b1={b1},b2={b2}"),
            KernelSpec::ExpDiag { p } => {
                let parts: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                write!(f, "expdiag:p=[{}]", parts.join(","))
            }
            KernelSpec::ConstPhi { c } => write!(f, "const_phi:c={c}"),
        }
    }
}

#[derive(Debug)]
enum Value {
    Num(f64),
    List(Vec<f64>),
}

struct Params {
    family: String,
    entries: Vec<(String, Value)>,
}

impl Params {
    fn take(&mut self, key: &str) -> Option<Value> {
        let pos = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(pos).1)
    }

    fn num(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Num(v)) => Ok(Some(v)),
            Some(Value::List(_)) => Err(bad(&self.family, format!("`{key}` must be a number"))),
        }
    }

    fn required(&mut self, key: &str) -> Result<f64> {
        self.num(key)?
            .ok_or_else(|| bad(&self.family, format!("missing parameter `{key}`")))
    }

    fn index(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.num(key)? {
            None => Ok(default),
            Some(v) if v >= 1.0 && v.fract() == 0.0 && v < 1e9 => Ok(v as usize),
            Some(v) => Err(bad(&self.family, format!("`{key}` must be a positive integer, got {v}"))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.first() {
            None => Ok(()),
            Some((k, _)) => Err(bad(&self.family, format!("unknown parameter `{k}`"))),
        }
    }
}

fn bad(family: &str, msg: String) -> Error {
    invalid(format!("kernel spec `{family}`: {msg} (grammar: {GRAMMAR})"))
}

fn parse_number(family: &str, text: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| bad(family, format!("`{}` is not a number", text.trim())))?;
    if !v.is_finite() {
        return Err(bad(family, format!("`{}` is not finite", text.trim())));
    }
    Ok(v)
}

fn split_params(family: &str, body: &str) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut rest = body.trim();
    while !rest.is_empty() {
        let eq = rest
            .find('=')
            .ok_or_else(|| bad(family, format!("expected key=value near `{rest}`")))?;
        let key = rest[..eq].trim().to_string();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(bad(family, format!("invalid parameter name `{key}`")));
        }
        rest = rest[eq + 1..].trim_start();
        let value = if let Some(list) = rest.strip_prefix('[') {
            let close = list
                .find(']')
                .ok_or_else(|| bad(family, "unterminated list".to_string()))?;
            let items = list[..close]
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_number(family, s))
                .collect::<Result<Vec<_>>>()?;
            rest = list[close + 1..].trim_start();
            Value::List(items)
        } else {
            let end = rest.find(',').unwrap_or(rest.len());
            let v = parse_number(family, &rest[..end])?;
            rest = &rest[end..];
            Value::Num(v)
        };
        if out.iter().any(|(k, _): &(String, Value)| *k == key) {
            return Err(bad(family, format!("duplicate parameter `{key}`")));
        }
        out.push((key, value));
        rest = match rest.strip_prefix(',') {
            Some(r) => r.trim_start(),
            None if rest.is_empty() => rest,
            None => return Err(bad(family, format!("expected `,` near `{rest}`"))),
        };
    }
    Ok(out)
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let (family, body) = match text.split_once(':') {
            Some((f, b)) => (f.trim(), b),
            None => (text, ""),
        };
        let mut params = Params {
            family: family.to_string(),
            entries: split_params(family, body)?,
        };
        let spec = match family {
            "zero" => KernelSpec::Zero,
            "volterra" => KernelSpec::Volterra {
                scale: params.num("b")?.unwrap_or(1.0),
            },
            "rank1" => KernelSpec::Rank1 {
                b: params.required("b")?,
                n: params.index("n", 1)?,
            },
            "rank2" | "remark12" => {
                let b = params.required("b")?;
                let c = params.required("c")?;
                if b * b + c * c <= 0.0 {
                    return Err(bad(family, "need b² + c² > 0".to_string()));
                }
                let part = params.index("part", 1)?;
                if part > 2 {
                    return Err(bad(family, format!("`part` must be 1 or 2, got {part}")));
                }
                KernelSpec::Rank2 { b, c, part: part as u8 }
            }
            "remark_gencv" => KernelSpec::GenCv {
                b1: params.required("b1")?,
                b2: params.required("b2")?,
            },
            "expdiag" => match params.take("p") {
                Some(Value::List(p)) if !p.is_empty() => KernelSpec::ExpDiag { p },
                Some(_) => return Err(bad(family, "`p` must be a non-empty list".to_string())),
                None => return Err(bad(family, "missing parameter `p`".to_string())),
            },
            "const_phi" => KernelSpec::ConstPhi {
                c: params.required("c")?,
            },
            other => return Err(invalid(format!("unknown kernel `{other}` (grammar: {GRAMMAR})"))),
        };
        params.finish()?;
        Ok(spec)
    }
}

/// Parses a spec and samples it on the grid.
pub fn kernel_zoo(spec: &str, grid: TimeGrid, dim: usize) -> Result<MatrixKernel> {
    spec.parse::<KernelSpec>()?.build(grid, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn parses_every_family() {
        let cases = [
            ("zero", KernelSpec::Zero),
            ("volterra", KernelSpec::Volterra { scale: 1.0 }),
            ("volterra:b=-0.5", KernelSpec::Volterra { scale: -0.5 }),
            ("rank1:b=0.3", KernelSpec::Rank1 { b: 0.3, n: 1 }),
            ("rank1:b=0.3,n=4", KernelSpec::Rank1 { b: 0.3, n: 4 }),
            ("rank2:b=0.41421356,c=1", KernelSpec::Rank2 { b: 0.41421356, c: 1.0, part: 1 }),
            ("remark12:b=1,c=2,part=2", KernelSpec::Rank2 { b: 1.0, c: 2.0, part: 2 }),
            ("remark_gencv:b1=-2,b2=-3", KernelSpec::GenCv { b1: -2.0, b2: -3.0 }),
            ("expdiag:p=[0.5, -0.5]", KernelSpec::ExpDiag { p: vec![0.5, -0.5] }),
            (" const_phi : c = 1 ", KernelSpec::ConstPhi { c: 1.0 }),
        ];
        for (text, want) in cases {
            let got: KernelSpec = text.parse().unwrap_or_else(|e| panic!("{text}: {e}"));
            assert_eq!(got, want, "{text}");
            let again: KernelSpec = got.to_string().parse().unwrap();
            assert_eq!(again, got);
        }
    }

    #[test]
    fn rejects_malformed_specs() {
        for text in [
            "rank1",
            "rank1:b=x",
            "rank1:b=0.3,n=0",
            "rank1:b=0.3,n=1.5",
            "rank1:b=0.3,b=0.4",
            "rank1:b=0.3,q=1",
            "rank2:b=0,c=0",
            "rank2:b=1,c=1,part=3",
            "expdiag:p=0.5",
            "expdiag:p=[0.5",
            "expdiag:p=[]",
            "const_phi:c=inf",
            "volterra:b",
        ] {
            assert!(text.parse::<KernelSpec>().is_err(), "{text}");
        }
    }

    #[test]
    fn unknown_family_cites_grammar() {
        let err = "wibble:b=1".parse::<KernelSpec>().unwrap_err().to_string();
        assert!(err.contains("unknown kernel `wibble`"));
        assert!(err.contains(GRAMMAR));
    }

    #[test]
    fn volterra_is_the_strict_indicator() {
        let k = kernel_zoo("volterra", grid(6), 1).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(k.get(i, j, 0, 0), if j < i { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn expdiag_values() {
        let g = grid(10);
        let k = kernel_zoo("expdiag:p=[0.5,-0.5]", g, 2).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let dt = g.node(i) - g.node(j);
                let (a, b) = if j < i { ((dt / 2.0).exp(), (-dt / 2.0).exp()) } else { (0.0, 0.0) };
                assert!((k.get(i, j, 0, 0) - a).abs() < 1e-15);
                assert!((k.get(i, j, 1, 1) - b).abs() < 1e-15);
                assert_eq!(k.get(i, j, 0, 1), 0.0);
            }
        }
        assert!(kernel_zoo("expdiag:p=[0.5]", g, 2).is_err());
    }

    #[test]
    fn remark_pair_layout() {
        let g = grid(32);
        let b = 0.41421356;
        let k1 = kernel_zoo(&format!("remark12:b={b},c=1"), g, 1).unwrap();
        let k2 = kernel_zoo(&format!("remark12:b={b},c=1,part=2"), g, 1).unwrap();
        let (e1, e2) = (trig_basis(&g, 1), trig_basis(&g, 2));
        assert!(k1.is_symmetric());
        assert!(!k2.is_symmetric());
        for i in 0..32 {
            for j in 0..32 {
                assert!((k1.get(i, j, 0, 0) - b * (e1[i] * e1[j] + e2[i] * e2[j])).abs() < 1e-14);
                assert!((k2.get(i, j, 0, 0) - (e2[i] * e1[j] - e1[i] * e2[j])).abs() < 1e-14);
            }
        }
        // κ₂ is antisymmetric
        assert!((k2.values() + k2.values().transpose()).amax() < 1e-15);
    }

    #[test]
    fn rank_one_uses_first_axis() {
        let k = kernel_zoo("rank1:b=2", grid(8), 3).unwrap();
        assert!(k.values().iter().enumerate().all(|(idx, v)| {
            let (r, c) = (idx % 24, idx / 24);
            *v == 0.0 || (r % 3 == 0 && c % 3 == 0)
        }));
    }

    #[test]
    fn const_phi_has_phi() {
        let g = grid(8);
        let spec: KernelSpec = "const_phi:c=2".parse().unwrap();
        let phi = spec.phi(g, 2).unwrap().unwrap();
        assert_eq!(phi.get(3, 5, 1, 1), 2.0);
        assert_eq!(phi.get(3, 5, 0, 1), 0.0);
        assert!(KernelSpec::Zero.phi(g, 1).unwrap().is_none());
        assert_eq!(spec.build(g, 2).unwrap(), kappa_from_phi(&phi));
    }

    proptest! {
        #[test]
        fn display_round_trips(b in -5.0..5.0f64, c in 0.1..5.0f64, n in 1usize..9) {
            for spec in [
                KernelSpec::Rank1 { b, n },
                KernelSpec::Rank2 { b, c, part: 2 },
                KernelSpec::GenCv { b1: b, b2: c },
                KernelSpec::ExpDiag { p: vec![b, c] },
                KernelSpec::Volterra { scale: b },
            ] {
                prop_assert_eq!(spec.to_string().parse::<KernelSpec>().unwrap(), spec);
            }
        }
    }
}
