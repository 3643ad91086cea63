use primgrasp::anchors::{assign_targets, AnchorSet};
use primgrasp::loss::{build_targets, loss_gradients, total_loss_with_targets};
use primgrasp::scene::read_labels;
use primgrasp::tensor::RawTensor;

use crate::error::{io_context, CliError};
use crate::GradcheckArgs;

/// Checks analytic gradients against central finite differences of the
/// frozen-target loss. Every parameter of a responsible slot is always
/// checked; no-object confidence parameters are subsampled evenly once the
/// `--max-params` budget is hit (a full-loss evaluation per probe makes an
/// exhaustive sweep quadratic in tensor size).
pub fn run(args: GradcheckArgs) -> Result<(), CliError> {
    if !args.step.is_finite() || args.step <= 0.0 {
        return Err(CliError::validation(format!(
            "--step must be positive and finite, got {}",
            args.step
        )));
    }
    let tensor = RawTensor::read_file(&args.tensor)?;
    let anchors = AnchorSet::read_file(&args.anchors)?;
    super::check_compat(&tensor, &anchors)?;
    let labels = read_labels(&args.labels)?;
    let weights = args.weights.build()?;
    let layout = *tensor.layout();
    let assignment = assign_targets(&labels, &anchors, &layout)?;
    let targets = build_targets(&tensor, &anchors, &labels, &assignment);
    let analytic = loss_gradients(&tensor, &anchors, &targets, &weights);

    // Responsible-slot parameters first, then evenly strided no-object
    // confidence parameters up to the budget.
    let vps = layout.values_per_slot();
    let mut indices: Vec<usize> = Vec::new();
    for (slot, _) in assignment.responsible() {
        let base = slot * vps;
        indices.extend(base..base + 6);
    }
    let noobj_slots: Vec<usize> = (0..layout.num_slots())
        .filter(|&s| assignment.is_noobj(s))
        .collect();
    let budget = args.max_params.saturating_sub(indices.len()).max(1);
    let stride = noobj_slots.len().div_ceil(budget).max(1);
    for slot in noobj_slots.iter().step_by(stride) {
        indices.push(slot * vps + 5);
    }

    let mut probe = tensor.clone();
    let (mut max_rel, mut max_abs, mut worst) = (0.0f64, 0.0f64, 0usize);
    for &i in &indices {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + args.step;
        let fp = total_loss_with_targets(&probe, &anchors, &targets, &weights).total;
        probe.values_mut()[i] = orig - args.step;
        let fm = total_loss_with_targets(&probe, &anchors, &targets, &weights).total;
        probe.values_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(CliError::internal(format!(
                "loss is non-finite in the step neighborhood of parameter {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * args.step);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        if scale > 1e-6 {
            let rel = (a - numeric).abs() / scale;
            if rel > max_rel {
                max_rel = rel;
                worst = i;
            }
        } else {
            max_abs = max_abs.max((a - numeric).abs());
        }
    }

    let report = format!(
        "checked {} of {} parameters\nmax_rel_error {max_rel:.8e}\nmax_abs_error {max_abs:.8e}\nworst_param {worst}\nwithin_tolerance {}\n",
        indices.len(),
        tensor.values().len(),
        max_rel <= args.tolerance
    );
    std::fs::write(&args.out, &report).map_err(io_context(&args.out))?;
    print!("{report}");
    Ok(())
}
