//! Fit a power law of distance against training-data fraction on log10 axes
//! and plot it.
//!
//! cargo run --example scaling_fit [out.svg]

use opinion_dist::evaluation::fit_scaling;
use opinion_dist::svg::scaling_plot;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let points = [(0.05, 0.262), (0.1, 0.241), (0.25, 0.214), (0.5, 0.197), (1.0, 0.181)];
    let fit = fit_scaling(&points)?;
    println!("log10(WD) = {:.4} * log10(fraction) + {:.4}", fit.slope, fit.intercept);
    for ((x, y), r) in points.iter().zip(fit.residuals()) {
        println!("  fraction {x:<5} observed {y:.3} fitted {:.3} residual {r:+.4}", fit.predict(*x)?);
    }
    println!("doubling the data multiplies WD by {:.3}", 2f64.powf(fit.slope));
    let out = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir().join("scaling.svg").to_string_lossy().into_owned()
    });
    std::fs::write(&out, scaling_plot(&fit))?;
    println!("wrote {out}");
    Ok(())
}
