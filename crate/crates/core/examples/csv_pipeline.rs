//! Round trip through CSV files, then estimation from the loaded data. The
//! same files work with `ppate estimate --d1 ... --d2 ...`.

use ppate::dataset::{load_csv, CsvSchema, Role};
use ppate::pipeline::{run_observational, EstimateConfig};
use ppate::synthgen::{generate, DgpConfig, Scenario};

fn main() -> ppate::Result<()> {
    let dir = std::env::temp_dir().join("ppate-csv-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");

    let data = generate(&DgpConfig::scenario(Scenario::Medium, 8).with_sizes(300, 4000))?;
    let schema = CsvSchema::numbered(1);
    data.d1.save_csv(dir.join("d1.csv"), &schema)?;
    data.d2.save_csv(dir.join("d2.csv"), &schema)?;

    let d1 = load_csv(dir.join("d1.csv"), &schema, Role::SmallUnconfounded)?;
    let d2 = load_csv(dir.join("d2.csv"), &schema, Role::LargeAuxiliary)?;
    assert_eq!(d1.outcomes(), data.d1.outcomes());

    let cfg = EstimateConfig {
        alpha: 0.1,
        ..EstimateConfig::default()
    };
    let est = run_observational(&d1, &d2, &cfg)?;
    println!("files in {}", dir.display());
    println!("{}", serde_json::to_string_pretty(&est).expect("serializable"));
    Ok(())
}
