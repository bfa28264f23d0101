//! WebAssembly entry points for the static demo page in `www/`.
//!
//! Each demo is a plain function returning a serializable result so it can
//! be tested natively; the `#[wasm_bindgen]` wrappers only convert errors.

use std::fmt::Write as _;

use serde::Serialize;
use topoprobe::dataset::Sample;
use topoprobe::detector::{
    derivative_curve, find_crossover, prediction_curve, Method, PeakStatus, DEFAULT_SMOOTHING_WINDOW,
};
use topoprobe::fidelity::{chi_f_curve_exact, chi_f_curve_mc, chi_f_peak};
use topoprobe::igt::{sample_igt, sample_igt_grid, IgtParams, SamplerSettings};
use topoprobe::lattice::LatticeGeometry;
use topoprobe::plot::{Plot, Reference, Series};
use topoprobe::predictor::dos_build;
use topoprobe::toric::{sample_sigma_x, FieldPreset, ToricField, EXACT_TORIC_MAX_N};
use wasm_bindgen::prelude::*;

/// Onsager's critical coupling of the 2D Ising model, ½ ln(1 + √2).
pub const ONSAGER_BETA: f64 = 0.440_686_793_509_772;

#[derive(Debug, Clone, Serialize)]
pub struct CurveDemo {
    pub svg: String,
    pub beta_star: Option<f64>,
    pub exact: bool,
}

fn field_preset(name: &str, seed: u64) -> topoprobe::Result<FieldPreset> {
    Ok(match name {
        "uniform" => FieldPreset::Uniform { value: 1.0 },
        "checkerboard" => FieldPreset::Checkerboard,
        "half_zero" => FieldPreset::HalfZero,
        "random" => FieldPreset::Random { seed },
        other => {
            return Err(topoprobe::Error::InvalidParameter(format!(
                "unknown field preset `{other}`"
            )))
        }
    })
}

/// χ_F(β) on `points` values in [0, beta_max]; exact for n ≤ 3, sampled otherwise.
pub fn fidelity_curve(
    n: usize,
    field: &str,
    beta_max: f64,
    points: usize,
    mc_samples: usize,
    seed: u64,
) -> topoprobe::Result<CurveDemo> {
    let geometry = LatticeGeometry::new(n)?;
    let lambdas = field_preset(field, seed)?.resolve(&geometry)?;
    let grid = topoprobe::dataset::linspace(0.0, beta_max, points);
    let exact = n <= EXACT_TORIC_MAX_N;
    let curve = if exact {
        chi_f_curve_exact(n, &lambdas, &grid)?
    } else {
        chi_f_curve_mc(n, &lambdas, &grid, &SamplerSettings::new(mc_samples), seed)?
    };
    let peak = chi_f_peak(&curve)?;
    let mut plot = Plot::new(&format!("χ_F, n = {n}, {field} field"), "β", "χ_F");
    plot.series.push(Series {
        name: "χ_F".into(),
        points: curve
            .beta_grid
            .iter()
            .copied()
            .zip(curve.chi_values.iter().copied())
            .collect(),
    });
    plot.references.push(Reference {
        name: format!("peak {peak:.3}"),
        x: peak,
    });
    if field == "uniform" && beta_max >= ONSAGER_BETA {
        plot.references.push(Reference {
            name: "Onsager".into(),
            x: ONSAGER_BETA,
        });
    }
    Ok(CurveDemo {
        svg: plot.to_svg()?,
        beta_star: Some(peak),
        exact,
    })
}

/// Samples the gauge theory on a β grid, builds the density-of-states
/// predictor from it and plots D(β) with its peak.
pub fn dos_crossover(
    n: usize,
    beta_max: f64,
    points: usize,
    per_beta: usize,
    seed: u64,
) -> topoprobe::Result<CurveDemo> {
    let grid = topoprobe::dataset::linspace(0.0, beta_max, points);
    let settings = SamplerSettings::new(per_beta);
    let train = sample_igt_grid(n, &grid, &settings, seed, 0)?;
    let eval = sample_igt_grid(n, &grid, &settings, seed, 1)?;
    let dos = dos_build(&train)?.model();
    let model = dos.bind()?;
    let d = derivative_curve(&prediction_curve(&model, &eval)?)?;
    let report = find_crossover(&d, DEFAULT_SMOOTHING_WINDOW, Method::Dos)?;
    let mut plot = Plot::new(&format!("D(β), gauge theory n = {n}"), "β", "D");
    plot.series.push(Series {
        name: "D".into(),
        points: d.beta.iter().copied().zip(d.d.iter().copied()).collect(),
    });
    let beta_star = (report.status == PeakStatus::Peak).then_some(report.beta_star);
    if let Some(b) = beta_star {
        plot.references.push(Reference {
            name: format!("β* {b:.3}"),
            x: b,
        });
    }
    Ok(CurveDemo {
        svg: plot.to_svg()?,
        beta_star,
        exact: false,
    })
}

const CELL: f64 = 28.0;
const PAD: f64 = 14.0;

/// One sampled configuration drawn on the torus: bonds with spin −1 in
/// orange, frustrated plaquettes shaded.
pub fn config_svg(kind: &str, n: usize, beta: f64, seed: u64) -> topoprobe::Result<String> {
    let geometry = LatticeGeometry::new(n)?;
    let settings = SamplerSettings::new(1);
    let ds = match kind {
        "igt" => sample_igt(IgtParams::new(n, beta)?, &settings, seed)?,
        "toric_x" => {
            let lambdas = FieldPreset::Uniform { value: 1.0 }.resolve(&geometry)?;
            sample_sigma_x(n, &ToricField::new(lambdas, beta)?, &settings, seed)?
        }
        other => return Err(topoprobe::Error::InvalidParameter(format!("unknown model `{other}`"))),
    };
    let Sample::Spins(config) = &ds.records[0].sample else {
        unreachable!("spin samplers return spin records")
    };
    let size = 2.0 * PAD + n as f64 * CELL;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#).unwrap();
    let at = |k: usize| PAD + k as f64 * CELL;
    for p in 0..geometry.plaquette_count() {
        if geometry.plaquette_product(config, p)? < 0 {
            let (r, c) = (p / n, p % n);
            writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="#f6c7c0"/>"##,
                at(c),
                at(r)
            )
            .unwrap();
        }
    }
    let nn = n * n;
    for (b, &spin) in config.values().iter().enumerate() {
        let (r, c) = ((b % nn) / n, b % n);
        let (x2, y2) = if b < nn { (at(c + 1), at(r)) } else { (at(c), at(r + 1)) };
        let (color, width) = if spin < 0 { ("#e8590c", 3.5) } else { ("#adb5bd", 1.5) };
        writeln!(
            s,
            r#"<line x1="{}" y1="{}" x2="{x2}" y2="{y2}" stroke="{color}" stroke-width="{width}" stroke-linecap="round"/>"#,
            at(c),
            at(r)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn js<T: Serialize>(r: topoprobe::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON `{svg, beta_star, exact}`.
#[wasm_bindgen(js_name = fidelityCurve)]
pub fn fidelity_curve_js(
    n: usize,
    field: &str,
    beta_max: f64,
    points: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<String, JsError> {
    js(fidelity_curve(n, field, beta_max, points, mc_samples, seed))
}

/// JSON `{svg, beta_star, exact}`.
#[wasm_bindgen(js_name = dosCrossover)]
pub fn dos_crossover_js(n: usize, beta_max: f64, points: usize, per_beta: usize, seed: u64) -> Result<String, JsError> {
    js(dos_crossover(n, beta_max, points, per_beta, seed))
}

#[wasm_bindgen(js_name = configSvg)]
pub fn config_svg_js(kind: &str, n: usize, beta: f64, seed: u64) -> Result<String, JsError> {
    config_svg(kind, n, beta, seed).map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onsager_constant() {
        assert!((ONSAGER_BETA - 0.5 * (1.0 + 2f64.sqrt()).ln()).abs() < 1e-15);
    }

    #[test]
    fn exact_fidelity_curve_for_small_lattice() {
        let demo = fidelity_curve(3, "uniform", 1.0, 21, 100, 1).unwrap();
        assert!(demo.exact);
        assert!(demo.svg.contains("<polyline"));
        assert_eq!(demo.svg.matches("stroke-dasharray").count(), 2);
        let b = demo.beta_star.unwrap();
        assert!(b > 0.0 && b < 1.0);
        assert!(fidelity_curve(3, "spiral", 1.0, 21, 100, 1).is_err());
    }

    #[test]
    fn dos_demo_finds_a_peak() {
        let demo = dos_crossover(4, 3.0, 16, 200, 3).unwrap();
        let b = demo.beta_star.expect("peak");
        assert!(b > 0.0 && b < 3.0);
        assert_eq!(demo.svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn config_drawing_counts() {
        let svg = config_svg("igt", 4, 0.0, 2).unwrap();
        assert_eq!(svg.matches("<line").count(), 32);
        let svg = config_svg("toric_x", 4, 0.0, 2).unwrap();
        assert_eq!(svg.matches("<line").count(), 32);
        assert!(svg.ends_with("</svg>\n"));
        assert!(config_svg("toric_z", 4, 0.0, 2).is_err());
    }
}
