//! Regenerates the committed fixture tree.
//!
//! ```text
//! cargo run -p pivotfit-core --example make_fixtures -- fixtures
//! ```

use std::path::PathBuf;

use pivotfit_core::ingest::{write_series, ChainMetric, TimeSeries};
use pivotfit_core::synthetic::{generate, SyntheticSpec};

fn main() -> pivotfit_core::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let data = generate(&SyntheticSpec::default())?;
    data.dataset.write_dir(root.join("datasets/synthetic"))?;
    for sub in ["pivots", "chain", "imports"] {
        std::fs::create_dir_all(root.join(sub))?;
    }
    std::fs::write(
        root.join("pivots/synthetic.json"),
        serde_json::to_string_pretty(&data.pivots)? + "\n",
    )?;

    // raw inputs for `pivotfit ingest`: chain metrics by API name, difficulty
    // only every other day so alignment has gaps to fill
    for metric in ChainMetric::ALL {
        let full = data.dataset.series(metric.column_name())?;
        let series = if metric == ChainMetric::Difficulty {
            let (dates, values) = full.points().step_by(2).unzip();
            TimeSeries::new(metric.as_str(), dates, values)?
        } else {
            full.with_name(metric.as_str())
        };
        write_series(&series, root.join(format!("chain/{}.csv", metric.as_str())))?;
    }
    for name in ["gtrend", "wiki_cryptocurrency"] {
        write_series(&data.dataset.series(name)?, root.join(format!("imports/{name}.csv")))?;
    }
    Ok(())
}
