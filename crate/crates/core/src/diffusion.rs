//! Explicit diffusion sub-step on the periodic lattice and Péclet matching
//! between lattices of different length.

use crate::error::{Error, Result};
use crate::lattice::ColorField;

/// Stability limit of the explicit three-point scheme with unit spacing.
pub const MAX_DIFFUSIVITY: f64 = 0.5;

/// Smallest lattice on which the three-point stencil is well defined.
pub const MIN_SITES: usize = 3;

/// Diffusivity in lattice sites² per iteration, checked against the
/// stability range `[0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Diffusivity(f64);

impl Diffusivity {
    pub fn new(d: f64) -> Result<Self> {
        if (0.0..=MAX_DIFFUSIVITY).contains(&d) {
            Ok(Diffusivity(d))
        } else {
            Err(Error::Stability {
                d,
                hint: format!("the explicit scheme needs 0 <= D <= {MAX_DIFFUSIVITY}"),
            })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `c_i <- (1 - 2D) c_i + D c_{i+1} + D c_{i-1}` with periodic closure,
/// evaluated from the previous field (never in place).
pub fn diffusion_step(field: &ColorField, d: f64) -> Result<ColorField> {
    let d = Diffusivity::new(d)?.get();
    if field.len() < MIN_SITES {
        return Err(Error::invalid(format!(
            "diffusion needs at least {MIN_SITES} sites, got {}",
            field.len()
        )));
    }
    if d == 0.0 {
        return Ok(field.clone());
    }
    let mut out = Vec::with_capacity(field.len());
    diffuse_into(field.values(), d, &mut out);
    Ok(ColorField::from_raw(out))
}

pub(crate) fn diffuse_into(src: &[f64], d: f64, out: &mut Vec<f64>) {
    let n = src.len();
    debug_assert!(n >= MIN_SITES);
    let centre = 1.0 - 2.0 * d;
    // The exact update is a convex combination of the three inputs; the clamp
    // only removes rounding that would step outside their range.
    let stencil = |left: f64, mid: f64, right: f64| {
        let v = centre * mid + d * right + d * left;
        v.clamp(left.min(mid).min(right), left.max(mid).max(right))
    };
    out.clear();
    out.reserve(n);
    out.push(stencil(src[n - 1], src[0], src[1]));
    out.extend(src.windows(3).map(|w| stencil(w[0], w[1], w[2])));
    out.push(stencil(src[n - 2], src[n - 1], src[0]));
}

/// Iterations on a lattice of length `l_new` that give the same
/// dimensionless diffusion as `t_max_ref` iterations on `l_ref`, rounded up.
pub fn match_iterations(l_ref: u64, t_max_ref: u64, l_new: u64) -> u64 {
    // ceil(l_new² · t_ref / l_ref²) in exact integer arithmetic
    let num = (l_new as u128) * (l_new as u128) * (t_max_ref as u128);
    let den = (l_ref as u128) * (l_ref as u128);
    num.div_ceil(den) as u64
}

/// `Pe = L² / (D · T_max)`; infinite when `D = 0`.
pub fn peclet_number(l: u64, d: f64, t_max: u64) -> f64 {
    if d == 0.0 {
        return f64::INFINITY;
    }
    (l as f64).powi(2) / (d * t_max as f64)
}

/// `D = L² / (Pe · T_max)`, rejected when it leaves the stable range.
pub fn diffusivity_from_peclet(l: u64, pe: f64, t_max: u64) -> Result<f64> {
    if !(pe > 0.0) {
        return Err(Error::invalid(format!("Péclet number {pe} must be positive")));
    }
    if t_max == 0 {
        return Err(Error::invalid("T_max must be positive"));
    }
    let d = (l as f64).powi(2) / (pe * t_max as f64);
    if d > MAX_DIFFUSIVITY {
        return Err(Error::Stability {
            d,
            hint: format!(
                "Pe = {pe} on L = {l} needs T_max >= {} iterations",
                ((l as f64).powi(2) / (pe * MAX_DIFFUSIVITY)).ceil()
            ),
        });
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{average_color, mixing_norm};
    use proptest::prelude::*;

    fn field(v: &[f64]) -> ColorField {
        ColorField::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_diffusivity_is_identity() {
        let f = field(&[0.0, 0.25, 1.0, 0.5]);
        assert_eq!(diffusion_step(&f, 0.0).unwrap(), f);
    }

    #[test]
    fn half_is_neighbour_average() {
        let f = field(&[0.0, 0.25, 1.0, 0.5, 0.75]);
        let out = diffusion_step(&f, 0.5).unwrap();
        let v = f.values();
        let n = v.len();
        for i in 0..n {
            let want = 0.5 * (v[(i + 1) % n] + v[(i + n - 1) % n]);
            assert!((out.values()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_is_equilibrium() {
        let f = field(&[0.3; 17]);
        for d in [0.01, 0.2, 0.5] {
            assert_eq!(diffusion_step(&f, d).unwrap(), f);
        }
    }

    #[test]
    fn errors() {
        let f = field(&[0.0, 1.0, 0.5]);
        assert!(matches!(diffusion_step(&f, 0.51), Err(Error::Stability { .. })));
        assert!(matches!(diffusion_step(&f, -0.1), Err(Error::Stability { .. })));
        assert!(matches!(diffusion_step(&field(&[0.0, 1.0]), 0.1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn iteration_matching() {
        assert_eq!(match_iterations(369, 50, 671), 166);
        assert_eq!(match_iterations(369, 50, 888), 290);
        assert_eq!(match_iterations(369, 50, 1157), 492);
        assert_eq!(match_iterations(369, 50, 1484), 809);
        assert_eq!(match_iterations(369, 50, 4641), 7910);
        assert_eq!(match_iterations(369, 50, 6187), 14057);
        assert_eq!(match_iterations(671, 500, 888), 876);
        assert_eq!(match_iterations(500, 77, 500), 77);
    }

    #[test]
    fn peclet_values() {
        assert!((peclet_number(671, 0.451, 500) - 1996.6).abs() < 0.05);
        assert!((peclet_number(888, 0.45024, 876) - 1999.3).abs() < 0.05);
        assert_eq!(peclet_number(671, 0.0, 500), f64::INFINITY);
        let a = peclet_number(671, 0.1, 500);
        let b = peclet_number(671, 0.1, 250);
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn diffusivity_values() {
        assert!((diffusivity_from_peclet(671, 2000.0, 500).unwrap() - 0.450241).abs() < 1e-6);
        assert!((diffusivity_from_peclet(671, 32000.0, 500).unwrap() - 0.02814).abs() < 1e-5);
        assert!(matches!(
            diffusivity_from_peclet(671, 1000.0, 500),
            Err(Error::Stability { .. })
        ));
        assert!(diffusivity_from_peclet(671, 0.0, 500).is_err());
        for pe in [2000.0, 4321.5, 32000.0] {
            let d = diffusivity_from_peclet(888, pe, 876).unwrap();
            assert!((peclet_number(888, d, 876) / pe - 1.0).abs() < 1e-12);
        }
    }

    fn arb_field() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, 3..200)
    }

    proptest! {
        #[test]
        fn conserves_mass(v in arb_field(), d in 0.0f64..=0.5) {
            let f = field(&v);
            let out = diffusion_step(&f, d).unwrap();
            let before: f64 = v.iter().sum();
            let after: f64 = out.values().iter().sum();
            prop_assert!((after - before).abs() <= 1e-12 * before.max(1e-300) + 1e-15);
        }

        #[test]
        fn maximum_principle(v in arb_field(), d in 0.0f64..=0.5) {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = diffusion_step(&field(&v), d).unwrap();
            for &x in out.values() {
                prop_assert!(x >= lo && x <= hi, "{x} outside [{lo}, {hi}]");
            }
        }

        #[test]
        fn variance_never_grows(v in arb_field(), d in 0.0f64..=0.5) {
            let f = field(&v);
            let cbar = average_color(&f);
            let out = diffusion_step(&f, d).unwrap();
            prop_assert!(mixing_norm(&out, cbar, 2.0) <= mixing_norm(&f, cbar, 2.0) + 1e-12);
        }

        #[test]
        fn commutes_with_cyclic_shift(v in arb_field(), d in 0.0f64..=0.5, k in 0usize..200) {
            let k = k % v.len();
            let mut shifted = v.clone();
            shifted.rotate_left(k);
            let a = diffusion_step(&field(&shifted), d).unwrap().into_values();
            let mut b = diffusion_step(&field(&v), d).unwrap().into_values();
            b.rotate_left(k);
            prop_assert_eq!(a, b);
        }
    }
}
