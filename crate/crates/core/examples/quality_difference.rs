//! Expected quality difference between an analytic source and candidate
//! models: zero for the source itself, positive for a shifted one.

use timegci::toy::{expected_quality_difference, ToySource};

fn main() -> timegci::Result<()> {
    let src = ToySource { horizon: 5, std: 0.1, ..ToySource::default() };
    let mut rng = timegci::seeded_rng(0);
    for shift in [0.0, 0.1, 0.25, 0.5] {
        let e = expected_quality_difference(&src, &src.shifted(shift), 20_000, &mut rng)?;
        println!("shift {shift:<5} difference {:+.4} ± {:.4}", e.value, e.std_error);
    }
    Ok(())
}
