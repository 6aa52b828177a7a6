use super::{AdapterSpec, Variant};

/// Trainable scalars one `m×n` layer contributes under `spec`.
pub fn layer_trainable_params(m: usize, n: usize, spec: &AdapterSpec) -> usize {
    let (ra, rb) = (spec.rank_a, spec.rank_b);
    match spec.variant {
        Variant::FullTuning | Variant::LinearProbe => m * n + m,
        Variant::LoRA | Variant::PiSSA => ra * (m + n),
        Variant::SeqLoRA => 2 * rb * m,
        Variant::CPS | Variant::HyPS => ra * (m + n) + 2 * rb * m,
    }
}

/// Sum of [`layer_trainable_params`] over a layer inventory of `(m, n)` shapes.
pub fn trainable_params(inventory: &[(usize, usize)], spec: &AdapterSpec) -> usize {
    inventory.iter().map(|&(m, n)| layer_trainable_params(m, n, spec)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let shape = [(4, 6)];
        let count = |v| trainable_params(&shape, &AdapterSpec::new(v, 2));
        assert_eq!(count(Variant::LoRA), 20);
        assert_eq!(count(Variant::SeqLoRA), 16);
        assert_eq!(count(Variant::CPS), 36);
        assert_eq!(count(Variant::HyPS), 36);
        assert_eq!(count(Variant::PiSSA), 20);
        assert_eq!(count(Variant::FullTuning), 28);
        assert_eq!(count(Variant::LinearProbe), 28);
        assert_eq!(trainable_params(&[(1, 1)], &AdapterSpec::new(Variant::HyPS, 1)), 4);
    }
}
