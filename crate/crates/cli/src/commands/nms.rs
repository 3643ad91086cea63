use primgrasp::scene::write_ppm;
use primgrasp::suppression::{read_detections, rnms, write_detections, NmsConfig};

use crate::error::CliError;
use crate::NmsArgs;

pub fn run(args: NmsArgs) -> Result<(), CliError> {
    let dets = read_detections(&args.dets)?;
    let config = NmsConfig {
        iou_threshold: args.iou_threshold,
        class_aware: !args.class_agnostic,
        prefilter: !args.no_prefilter,
    };
    let kept = rnms(&dets, &config);
    write_detections(&kept, &args.out)?;
    println!(
        "kept {} of {} detections at IoU threshold {} to {}",
        kept.len(),
        dets.len(),
        args.iou_threshold,
        args.out.display()
    );
    if let Some(overlay_path) = &args.overlay {
        let base = super::overlay_base(&args.image)?;
        let image = crate::overlay::render(&kept, base, 0);
        write_ppm(&image, overlay_path)?;
    }
    Ok(())
}
