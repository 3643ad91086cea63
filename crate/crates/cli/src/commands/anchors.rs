use primgrasp::anchors::{build_rotated_anchors, cluster_dims, AnchorFileMeta, ClusterConfig};
use primgrasp::scene::{read_labels, read_manifest};

use crate::error::CliError;
use crate::AnchorsArgs;

pub fn run(args: AnchorsArgs) -> Result<(), CliError> {
    let label_files = read_manifest(&args.manifest)?;
    if label_files.is_empty() {
        return Err(CliError::validation(format!(
            "--manifest {} lists no label files",
            args.manifest.display()
        )));
    }
    let mut labels = Vec::new();
    for path in &label_files {
        labels.extend(read_labels(path)?);
    }
    let config = ClusterConfig {
        k: args.k,
        seed: args.seed,
        max_iter: args.max_iter,
        tol: args.tol,
    };
    let outcome = cluster_dims(&labels, &config)?;
    let set = build_rotated_anchors(&outcome.centroids, args.angles);
    set.write_file(
        &args.out,
        &AnchorFileMeta {
            k: args.k,
            angle_count: args.angles,
            seed: args.seed,
        },
    )?;
    println!(
        "clustered {} labels into {} centroids; wrote {} anchors to {}",
        labels.len(),
        outcome.centroids.len(),
        set.len(),
        args.out.display()
    );
    Ok(())
}
