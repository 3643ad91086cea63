use primgrasp::anchors::AnchorSet;
use primgrasp::scene::write_ppm;
use primgrasp::suppression::write_detections;
use primgrasp::tensor::RawTensor;

use crate::error::CliError;
use crate::DecodeArgs;

pub fn run(args: DecodeArgs) -> Result<(), CliError> {
    let tensor = RawTensor::read_file(&args.tensor)?;
    let anchors = AnchorSet::read_file(&args.anchors)?;
    super::check_compat(&tensor, &anchors)?;
    let dets = super::decode_all(&tensor, &anchors, args.score_threshold);
    write_detections(&dets, &args.out)?;
    println!(
        "decoded {} detections at score >= {} to {}",
        dets.len(),
        args.score_threshold,
        args.out.display()
    );
    if let Some(overlay_path) = &args.overlay {
        let base = super::overlay_base(&args.image)?;
        let side = tensor.layout().image_side().ceil() as usize;
        let image = crate::overlay::render(&dets, base, side);
        write_ppm(&image, overlay_path)?;
    }
    Ok(())
}
