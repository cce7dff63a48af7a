//! Finite signed measures μ = Σ w_i δ_{a_i} + f dx and their split into a
//! diffuse and a concentrated part.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Grid, Point};
use crate::kernels::{diagonal_is_singular, OperatorSpec};
use crate::quadrature::gl32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub point: Point,
    pub weight: f64,
}

impl Atom {
    pub fn new(point: Point, weight: f64) -> Self {
        Atom { point, weight }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

/// Density of the absolutely continuous part.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Density {
    Constant {
        value: f64,
    },
    /// amplitude · exp(-|x - center|² / (2 width²))
    GaussianBump {
        center: Point,
        amplitude: f64,
        width: f64,
    },
    /// Values on the interior nodes of the domain grid with spacing `h`.
    Nodes {
        h: f64,
        values: Vec<f64>,
    },
    /// Positive or negative part of another density.
    Part {
        sign: Sign,
        inner: Box<Density>,
    },
    #[serde(skip)]
    Custom(Arc<dyn Fn(&Point) -> f64 + Send + Sync>),
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Constant { value } => write!(f, "Constant({value})"),
            Density::GaussianBump {
                center,
                amplitude,
                width,
            } => write!(
                f,
                "GaussianBump({:?}, {amplitude}, {width})",
                center.coords()
            ),
            Density::Nodes { h, values } => write!(f, "Nodes(h = {h}, {} values)", values.len()),
            Density::Part { sign, inner } => write!(f, "{sign:?}Part({inner:?})"),
            Density::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for Density {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Density::Constant { value: a }, Density::Constant { value: b }) => a == b,
            (
                Density::GaussianBump {
                    center: c1,
                    amplitude: a1,
                    width: w1,
                },
                Density::GaussianBump {
                    center: c2,
                    amplitude: a2,
                    width: w2,
                },
            ) => c1 == c2 && a1 == a2 && w1 == w2,
            (Density::Nodes { h: h1, values: v1 }, Density::Nodes { h: h2, values: v2 }) => {
                h1 == h2 && v1 == v2
            }
            (
                Density::Part {
                    sign: s1,
                    inner: i1,
                },
                Density::Part {
                    sign: s2,
                    inner: i2,
                },
            ) => s1 == s2 && i1 == i2,
            (Density::Custom(a), Density::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Density {
    /// Pointwise value; `None` for node arrays, which need a grid.
    pub fn eval(&self, x: &Point) -> Option<f64> {
        match self {
            Density::Constant { value } => Some(*value),
            Density::GaussianBump {
                center,
                amplitude,
                width,
            } => Some(amplitude * (-x.sub(center).norm_sq() / (2.0 * width * width)).exp()),
            Density::Nodes { .. } => None,
            Density::Part { sign, inner } => inner.eval(x).map(|v| match sign {
                Sign::Positive => v.max(0.0),
                Sign::Negative => (-v).max(0.0),
            }),
            Density::Custom(f) => Some(f(x)),
        }
    }

    /// Values at the interior nodes of `grid`.
    pub fn on_grid(&self, grid: &Grid) -> Result<Vec<f64>> {
        match self {
            Density::Nodes { h, values } => {
                if (h - grid.h()).abs() > 1e-12 * h || values.len() != grid.len() {
                    return Err(Error::InvalidArgument(format!(
                        "node density given for h = {h} with {} values, grid has h = {} and {} nodes",
                        values.len(),
                        grid.h(),
                        grid.len()
                    )));
                }
                Ok(values.clone())
            }
            Density::Part { sign, inner } => {
                let v = inner.on_grid(grid)?;
                Ok(v.into_iter()
                    .map(|v| match sign {
                        Sign::Positive => v.max(0.0),
                        Sign::Negative => (-v).max(0.0),
                    })
                    .collect())
            }
            _ => Ok((0..grid.len())
                .map(|i| self.eval(&grid.point(i)).unwrap_or(0.0))
                .collect()),
        }
    }

    /// The constant value, if the density is constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Density::Constant { value } => Some(*value),
            Density::Part { sign, inner } => inner.as_constant().map(|v| match sign {
                Sign::Positive => v.max(0.0),
                Sign::Negative => (-v).max(0.0),
            }),
            _ => None,
        }
    }

    fn part(&self, sign: Sign) -> Density {
        if let Some(v) = self.as_constant() {
            let value = match sign {
                Sign::Positive => v.max(0.0),
                Sign::Negative => (-v).max(0.0),
            };
            return Density::Constant { value };
        }
        Density::Part {
            sign,
            inner: Box::new(self.clone()),
        }
    }
}

/// μ = Σ atoms + density · dx on a domain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureData {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Density>,
}

impl MeasureData {
    pub fn zero() -> Self {
        MeasureData::default()
    }

    pub fn dirac(point: Point, weight: f64) -> Self {
        MeasureData {
            atoms: vec![Atom::new(point, weight)],
            density: None,
        }
    }

    pub fn with_density(density: Density) -> Self {
        MeasureData {
            atoms: Vec::new(),
            density: Some(density),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| a.weight == 0.0)
            && self
                .density
                .as_ref()
                .is_none_or(|d| d.as_constant() == Some(0.0))
    }

    /// Every atom must lie in the open domain with a finite weight.
    pub fn validate(&self, dom: &Domain) -> Result<()> {
        for a in &self.atoms {
            if !dom.contains(&a.point)? {
                return Err(Error::NotInterior(a.point.coords().to_vec()));
            }
            if !a.weight.is_finite() {
                return Err(Error::InvalidArgument("atom weight must be finite".into()));
            }
        }
        Ok(())
    }

    /// Atoms with equal points merged (first-occurrence order), zero weights dropped.
    pub fn merged_atoms(&self) -> Vec<Atom> {
        let mut out: Vec<Atom> = Vec::new();
        for a in &self.atoms {
            match out.iter_mut().find(|b| b.point == a.point) {
                Some(b) => b.weight += a.weight,
                None => out.push(*a),
            }
        }
        out.retain(|a| a.weight != 0.0);
        out
    }

    /// Positive or negative part of the Jordan decomposition.
    pub fn part(&self, sign: Sign) -> MeasureData {
        let atoms = self
            .merged_atoms()
            .into_iter()
            .filter_map(|a| {
                let w = match sign {
                    Sign::Positive => a.weight,
                    Sign::Negative => -a.weight,
                };
                (w > 0.0).then_some(Atom::new(a.point, w))
            })
            .collect();
        MeasureData {
            atoms,
            density: self.density.as_ref().map(|d| d.part(sign)),
        }
    }

    pub fn abs(&self) -> MeasureData {
        let pos = self.part(Sign::Positive);
        let neg = self.part(Sign::Negative);
        let mut atoms = pos.atoms;
        atoms.extend(neg.atoms);
        let density = self.density.as_ref().map(|d| match d.as_constant() {
            Some(v) => Density::Constant { value: v.abs() },
            None => {
                let d = d.clone();
                match d {
                    Density::Nodes { h, values } => Density::Nodes {
                        h,
                        values: values.iter().map(|v| v.abs()).collect(),
                    },
                    other => Density::Custom(Arc::new(move |x| other.eval(x).unwrap_or(0.0).abs())),
                }
            }
        });
        MeasureData { atoms, density }
    }

    /// Right-hand side for a grid solve: each atom is spread over the
    /// surrounding interior lattice points by multilinear weights and scaled
    /// by h^{-d}, so Σ rhs · h^d equals the atomic mass exactly; densities
    /// are sampled at the nodes.
    pub fn deposit(&self, grid: &Grid) -> Result<Vec<f64>> {
        let mut rhs = match &self.density {
            Some(d) => d.on_grid(grid)?,
            None => vec![0.0; grid.len()],
        };
        let inv = 1.0 / grid.cell_volume();
        for a in &self.atoms {
            let w = grid.multilinear_weights(&a.point);
            if w.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "atom at {:?} has no interior lattice neighbor at h = {}",
                    a.point.coords(),
                    grid.h()
                )));
            }
            for (n, lw) in w {
                rhs[n] += a.weight * lw * inv;
            }
        }
        Ok(rhs)
    }
}

/// ‖μ‖_TV = Σ|w_i| + ∫_D |f|.
pub fn total_variation(mu: &MeasureData, dom: &Domain) -> Result<f64> {
    let atoms: f64 = mu.merged_atoms().iter().map(|a| a.weight.abs()).sum();
    let dens = match &mu.density {
        None => 0.0,
        Some(Density::Nodes { h, values }) => {
            values.iter().map(|v| v.abs()).sum::<f64>() * h.powi(dom.dim() as i32)
        }
        Some(d) => {
            if let Some(v) = d.as_constant() {
                v.abs() * domain_volume(dom)
            } else {
                domain_integral(dom, |x| d.eval(x).unwrap_or(0.0).abs())
            }
        }
    };
    Ok(atoms + dens)
}

/// Lebesgue measure of a domain (masked rectangles by quadrature).
pub fn domain_volume(dom: &Domain) -> f64 {
    match dom {
        Domain::Interval { a, b } => b - a,
        Domain::Ball { radius, center } => {
            let d = center.dim() as f64;
            PI.powf(d / 2.0) / crate::special::gamma(d / 2.0 + 1.0) * radius.powf(d)
        }
        Domain::Rectangle { lo, hi, mask: None } => lo
            .coords()
            .iter()
            .zip(hi.coords())
            .map(|(l, h)| h - l)
            .product(),
        Domain::Rectangle { .. } => domain_integral(dom, |_| 1.0),
    }
}

/// ∫_D f dx by Gauss–Legendre: composite on intervals, polar/spherical on
/// balls, tensor on rectangles (with the mask applied pointwise).
pub fn domain_integral(dom: &Domain, f: impl Fn(&Point) -> f64) -> f64 {
    let rule = gl32();
    let panels = |a: f64, b: f64, m: usize| -> Vec<f64> {
        (0..=m).map(|k| a + (b - a) * k as f64 / m as f64).collect()
    };
    match dom {
        Domain::Interval { a, b } => {
            rule.integrate_panels(&panels(*a, *b, 16), |x| f(&Point::scalar(x)))
        }
        Domain::Ball { center, radius } => match center.dim() {
            1 => rule
                .integrate_panels(&panels(center.x() - radius, center.x() + radius, 16), |x| {
                    f(&Point::scalar(x))
                }),
            2 => {
                let m = 256;
                rule.integrate_panels(&panels(0.0, *radius, 8), |r| {
                    let mut s = 0.0;
                    for k in 0..m {
                        let t = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                        s += f(&center.add(&Point::new(&[r * t.cos(), r * t.sin()])));
                    }
                    s * 2.0 * PI / m as f64 * r
                })
            }
            _ => {
                let m = 64;
                rule.integrate_panels(&panels(0.0, *radius, 8), |r| {
                    rule.integrate_panels(&panels(0.0, PI, 4), |th| {
                        let mut s = 0.0;
                        for k in 0..m {
                            let ph = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                            let p = Point::new(&[
                                r * th.sin() * ph.cos(),
                                r * th.sin() * ph.sin(),
                                r * th.cos(),
                            ]);
                            s += f(&center.add(&p));
                        }
                        s * 2.0 * PI / m as f64 * r * r * th.sin()
                    })
                })
            }
        },
        Domain::Rectangle { lo, hi, .. } => {
            fn rec(
                dom: &Domain,
                f: &dyn Fn(&Point) -> f64,
                lo: &Point,
                hi: &Point,
                k: usize,
                x: &mut [f64; 3],
            ) -> f64 {
                let d = lo.dim();
                if k == d {
                    let p = Point::new(&x[..d]);
                    return if dom.contains_unchecked(&p) {
                        f(&p)
                    } else {
                        0.0
                    };
                }
                let rule = gl32();
                let (a, b) = (lo.coords()[k], hi.coords()[k]);
                let m = 8;
                let mut s = 0.0;
                for j in 0..m {
                    let pa = a + (b - a) * j as f64 / m as f64;
                    let pb = a + (b - a) * (j + 1) as f64 / m as f64;
                    for (t, w) in rule.points(pa, pb) {
                        x[k] = t;
                        s += w * rec(dom, f, lo, hi, k + 1, x);
                    }
                }
                s
            }
            rec(dom, &f, lo, hi, 0, &mut [0.0; 3])
        }
    }
}

/// μ = μ_d + μ_c with the atoms kept in their original order.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub diffuse: MeasureData,
    pub concentrated: MeasureData,
    concentrated_flags: Vec<bool>,
}

impl Decomposition {
    /// Reassemble the original measure.
    pub fn recombine(&self) -> MeasureData {
        let mut d = self.diffuse.atoms.iter();
        let mut c = self.concentrated.atoms.iter();
        let atoms = self
            .concentrated_flags
            .iter()
            .map(|&flag| {
                if flag {
                    *c.next().unwrap()
                } else {
                    *d.next().unwrap()
                }
            })
            .collect();
        MeasureData {
            atoms,
            density: self.diffuse.density.clone(),
        }
    }

    /// ∫ η dμ_c⁺.
    pub fn concentrated_positive_mass(&self, eta: impl Fn(&Point) -> f64) -> f64 {
        self.concentrated
            .part(Sign::Positive)
            .atoms
            .iter()
            .map(|a| a.weight * eta(&a.point))
            .sum()
    }
}

/// Split μ into its diffuse and concentrated parts: an atom is
/// concentrated iff points are polar for the operator (G(a, a) = +∞);
/// densities are always diffuse.
pub fn decompose(mu: &MeasureData, op: &OperatorSpec, dom: &Domain) -> Decomposition {
    let polar = diagonal_is_singular(op, dom.dim());
    let flags = vec![polar; mu.atoms.len()];
    let (c, d): (Vec<Atom>, Vec<Atom>) = mu.atoms.iter().partition(|_| polar);
    Decomposition {
        diffuse: MeasureData {
            atoms: d,
            density: mu.density.clone(),
        },
        concentrated: MeasureData {
            atoms: c,
            density: None,
        },
        concentrated_flags: flags,
    }
}
