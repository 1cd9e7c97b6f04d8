//! Property checks shared by the `properties` and `acceptance` targets.
//! Each check panics with a description on the first violation.

#![allow(dead_code)]

pub mod autodiff;
pub mod distributions;
pub mod model;

pub struct Check {
    pub name: &'static str,
    pub run: fn(),
    /// Trains networks; excluded from the property-suite time budget.
    pub trains: bool,
}

const fn check(name: &'static str, run: fn(), trains: bool) -> Check {
    Check { name, run, trains }
}

pub const CHECKS: &[Check] = &[
    check("autodiff unary ops", autodiff::unary_ops, false),
    check("autodiff binary ops", autodiff::binary_ops, false),
    check("autodiff losses", autodiff::losses, false),
    check("autodiff fan-out", autodiff::fan_out, false),
    check("autodiff visits and determinism", autodiff::visits_and_determinism, false),
    check("pdf mirror identity", distributions::pdf_mirror_identity, false),
    check("pdf normalization", distributions::model_free_pdf_normalizes, false),
    check("family normalization", distributions::families_normalize_and_sample_positive, false),
    check("sampler chi-square", distributions::sampler_matches_pdf, false),
    check("mean_mask accuracy and monotonicity", distributions::mean_mask_accurate_and_monotone, false),
    check("pdf shape signatures", distributions::pdf_shape_signatures, false),
    check("reparameterized gradients", model::reparameterized_gradients, false),
    check("eval forward vs expectation", model::dropout_eval_matches_expectation, false),
    check("dropout rate range", model::dropout_rate_in_unit_interval, false),
    check("entropy bounds", model::entropy_bounds, false),
    check("auroc monotone invariance", model::auroc_monotone_invariance, false),
    check("mc inference", model::mc_inference_properties, false),
    check("normalization round trip", model::normalization_round_trip, false),
    check("split partitions rows", model::split_partitions_rows, false),
    check("loaders are pure", model::loaders_are_pure, false),
    check("registry and structure", model::registry_and_structure, true),
    check("loss decreases", model::loss_decreases_on_separable_data, true),
    check("training determinism", model::training_is_deterministic, true),
    check("weight decay vs overfitting", model::weight_decay_limits_overfitting, true),
    check("pruning invariants", model::pruning_invariants, true),
    check("unpruned round matches training", model::unpruned_round_matches_plain_training, true),
];
