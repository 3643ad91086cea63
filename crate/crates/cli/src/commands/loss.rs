use primgrasp::anchors::{assign_targets, AnchorSet};
use primgrasp::loss::{total_loss, LossWeights};
use primgrasp::scene::read_labels;
use primgrasp::tensor::RawTensor;

use crate::error::{io_context, CliError};
use crate::{LossArgs, LossWeightOpts};

impl LossWeightOpts {
    pub fn build(&self) -> Result<LossWeights, CliError> {
        LossWeights::new(
            self.lambda_reg,
            self.lambda_angle,
            self.lambda_obj,
            self.lambda_noobj,
        )
        .map_err(|e| CliError::validation(format!("--lambda-* flags: {e}")))
    }
}

pub fn run(args: LossArgs) -> Result<(), CliError> {
    let tensor = RawTensor::read_file(&args.tensor)?;
    let anchors = AnchorSet::read_file(&args.anchors)?;
    super::check_compat(&tensor, &anchors)?;
    let labels = read_labels(&args.labels)?;
    let weights = args.weights.build()?;
    let assignment = assign_targets(&labels, &anchors, tensor.layout())?;
    let breakdown = total_loss(&tensor, &anchors, &labels, &assignment, &weights);
    let report = breakdown.report();
    std::fs::write(&args.out, &report).map_err(io_context(&args.out))?;
    print!("{report}");
    Ok(())
}
