//! Generate the desk synthetic corpus, write it to disk and read it back.

use tf_mamba::data::{generate, Dataset, GenerateConfig, Split};

fn main() -> tf_mamba::Result<()> {
    let ds = generate(&GenerateConfig::desk(0))?;
    let s = ds.manifest.shapes;
    println!("{} samples; text {:?} visual {:?} audio {:?}", ds.samples.len(), s.text, s.visual, s.audio);
    for split in [Split::Train, Split::Valid, Split::Test] {
        let part = ds.split(split);
        let mean = part.iter().map(|x| x.label).sum::<f64>() / part.len() as f64;
        println!("  {split:?}: {} samples, mean label {mean:+.3}", part.len());
    }

    let dir = std::env::temp_dir().join("tf_mamba_synthetic");
    ds.save(&dir)?;
    let back = Dataset::load(&dir)?;
    println!("saved to {} and reloaded: identical = {}", dir.display(), back.samples == ds.samples);
    Ok(())
}
