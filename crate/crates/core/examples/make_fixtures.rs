//! Write the bundled synthetic fixture: 200 points, two models, true
//! weights (0.3, 0.7), noise sd 0.1, every fifth point held out.
//!
//! cargo run -p bmm-core --example make_fixtures -- <dir>

use bmm_core::dataset::SplitSpec;
use bmm_core::synthetic::{global_mixture, write_csv_tables};

fn main() -> bmm_core::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures/synthetic".into());
    let dir = std::path::Path::new(&dir);
    let data = global_mixture(200, &[0.3, 0.7], 0.1, 20);
    let (obs, models) = write_csv_tables(&data, dir)?;
    let test: Vec<usize> = (0..data.n()).filter(|i| i % 5 == 4).collect();
    let split = SplitSpec {
        train: (0..data.n()).filter(|i| i % 5 != 4).collect(),
        test,
        ..Default::default()
    };
    std::fs::write(dir.join("split.json"), split.to_json()? + "\n")?;
    println!("wrote {} and {} model tables", obs.display(), models.len());
    Ok(())
}
