use std::path::PathBuf;

use primgrasp::scene;

use crate::error::CliError;
use crate::SynthArgs;

/// Writes `scene_NNNN.ppm` / `.txt` (and `_depth.pgm` with `--depth`) plus a
/// manifest of label paths relative to the output directory.
pub fn run(args: SynthArgs) -> Result<(), CliError> {
    let spec = args.scene.to_spec(args.depth);
    spec.validate()?;
    super::ensure_dir(&args.out_dir)?;
    let scenes = scene::generate_batch(&spec, args.seed, args.count)?;

    let mut manifest_entries: Vec<PathBuf> = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let stem = format!("scene_{i:04}");
        scene::write_scene(s, &args.out_dir, &stem)?;
        manifest_entries.push(PathBuf::from(format!("{stem}.txt")));
    }
    scene::write_manifest(&manifest_entries, args.out_dir.join("manifest.txt"))?;
    println!(
        "wrote {} scenes and manifest.txt under {}",
        scenes.len(),
        args.out_dir.display()
    );
    Ok(())
}
