//! Globally adaptive Gauss–Kronrod (7/15) integration on finite intervals.

use crate::error::{Error, QuadratureFailure, Result};

/// Tolerances shared by the quadrature-backed distribution routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSettings {
    /// Absolute tolerance on integrated probability mass.
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Absolute tolerance on the abscissa returned by inverse-CDF solves.
    pub root_tol: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            max_subdivisions: 2000,
            root_tol: 1e-10,
        }
    }
}

impl QuadratureSettings {
    pub fn new(abs_tol: f64, max_subdivisions: usize, root_tol: f64) -> Result<Self> {
        let s = Self {
            abs_tol,
            max_subdivisions,
            root_tol,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(Error::domain(format!(
                "abs_tol must be positive, got {}",
                self.abs_tol
            )));
        }
        if !(self.root_tol > 0.0 && self.root_tol.is_finite()) {
            return Err(Error::domain(format!(
                "root_tol must be positive, got {}",
                self.root_tol
            )));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::domain("max_subdivisions must be at least 1"));
        }
        Ok(())
    }
}

// Kronrod abscissae on [0, 1]; odd indices are the embedded Gauss points.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// One accepted subinterval of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub a: f64,
    pub b: f64,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
    pub panels: Vec<Panel>,
}

/// 15-point Kronrod estimate and |K15 - G7| on `[a, b]`.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Kronrod nodes and weights mapped onto `[a, b]`.
pub fn kronrod_nodes(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (0..15).map(move |i| {
        if i == 7 {
            (center, WGK[7] * half)
        } else if i < 7 {
            (center - half * XGK[i], WGK[i] * half)
        } else {
            let j = 14 - i;
            (center + half * XGK[j], WGK[j] * half)
        }
    })
}

/// Integrates `f` over `[breakpoints[0], breakpoints[last]]`, starting from
/// the panels between consecutive breakpoints and bisecting the panel with
/// the largest error estimate until the summed estimate is within
/// `settings.abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    breakpoints: &[f64],
    settings: &QuadratureSettings,
) -> Result<Integral> {
    if breakpoints.len() < 2 {
        return Err(Error::domain("integration needs at least two breakpoints"));
    }
    if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain(format!(
            "breakpoints must be strictly increasing: {breakpoints:?}"
        )));
    }

    let mut panels: Vec<Panel> = breakpoints
        .windows(2)
        .map(|w| {
            let (value, error) = gk15(&f, w[0], w[1]);
            Panel {
                a: w[0],
                b: w[1],
                value,
                error,
            }
        })
        .collect();

    let mut subdivisions = 0;
    loop {
        let total_err: f64 = panels.iter().map(|p| p.error).sum();
        if total_err <= settings.abs_tol {
            break;
        }
        if subdivisions >= settings.max_subdivisions {
            return Err(Error::Quadrature(QuadratureFailure {
                estimate: panels.iter().map(|p| p.value).sum(),
                error_estimate: total_err,
                abs_tol: settings.abs_tol,
                subdivisions,
            }));
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if !(p.a < mid && mid < p.b) {
            // Panel at floating-point resolution: accept as is.
            panels.push(Panel { error: 0.0, ..p });
            continue;
        }
        let (lv, le) = gk15(&f, p.a, mid);
        let (rv, re) = gk15(&f, mid, p.b);
        panels.push(Panel {
            a: p.a,
            b: mid,
            value: lv,
            error: le,
        });
        panels.push(Panel {
            a: mid,
            b: p.b,
            value: rv,
            error: re,
        });
        subdivisions += 1;
    }

    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    Ok(Integral {
        value: panels.iter().map(|p| p.value).sum(),
        error_estimate: panels.iter().map(|p| p.error).sum(),
        panels,
    })
}
