//! K-fold comparison of the stacking families on base predictions drawn
//! from a process whose truth is mildly cubic.

use brainage::ensemble::{cross_validate_select, fit_ensemble, EnsembleSpec};
use brainage::experiment::StackingSource;
use brainage::report::cv_table;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let source = StackingSource::default();
    let (x, y): (Vec<_>, Vec<_>) = source.table(600, 4).into_iter().unzip();

    let cv = cross_validate_select(&x, &y, &EnsembleSpec::default_candidates(), 5, 0)?;
    print!("{}", cv_table(&cv));

    let chosen = cv.selected.expect("at least one candidate succeeds");
    let model = fit_ensemble(&x, &y, &chosen)?;
    println!(
        "\n{} coefficients (features, then intercept):",
        chosen.title()
    );
    for c in &model.coefficients {
        println!("  {c:+.6}");
    }
    Ok(())
}
