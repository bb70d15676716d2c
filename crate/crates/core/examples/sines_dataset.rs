//! Simulate Sines, print its autocorrelation summary, normalize it and write
//! both scales as CSV.

use timegci::data::{dataset_stats, generate_sines, write_csv, AutocorrEstimator, Normalizer, SinesConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = generate_sines(&SinesConfig::default(), 0)?;
    let stats = dataset_stats(&raw, AutocorrEstimator::default())?;
    print!("{}", stats.to_text());

    let norm = Normalizer::fit(&raw)?;
    let scaled = norm.apply_dataset(&raw)?;
    let dir = std::env::temp_dir().join("timegci-sines");
    std::fs::create_dir_all(&dir)?;
    write_csv(&raw, &dir.join("raw.csv"))?;
    write_csv(&scaled, &dir.join("normalized.csv"))?;
    println!("wrote {} trajectories to {}", raw.len(), dir.display());
    Ok(())
}
