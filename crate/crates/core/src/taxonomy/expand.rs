use super::{CorpusSpec, PromptRecord, Sampling, TaxonomyError};

/// Lazy odometer over the cross product of axis values.
///
/// Yields per-axis value indices (same indexing as `spec.axes`). The first
/// template axis varies slowest, so the sequence is lexicographic in
/// template order.
#[derive(Debug, Clone)]
pub struct CrossProduct {
    order: Vec<usize>,
    radices: Vec<usize>,
    current: Option<Vec<usize>>,
    remaining: u128,
}

impl CrossProduct {
    pub fn new(spec: &CorpusSpec) -> Result<Self, TaxonomyError> {
        let remaining = spec.cross_product_size()?;
        let radices: Vec<usize> = spec.axes.iter().map(|a| a.values.len()).collect();
        let current = (remaining > 0).then(|| vec![0; radices.len()]);
        Ok(CrossProduct { order: spec.iteration_order(), radices, current, remaining })
    }

    /// Number of combinations left, without iterating.
    pub fn remaining(&self) -> u128 {
        self.remaining
    }
}

impl Iterator for CrossProduct {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.current.as_mut()?;
        let out = current.clone();
        self.remaining -= 1;
        let mut advanced = false;
        for &axis in self.order.iter().rev() {
            current[axis] += 1;
            if current[axis] < self.radices[axis] {
                advanced = true;
                break;
            }
            current[axis] = 0;
        }
        if !advanced {
            self.current = None;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        match usize::try_from(self.remaining) {
            Ok(n) => (n, Some(n)),
            Err(_) => (usize::MAX, None),
        }
    }
}

/// Every combination of axis values, rendered, in lexicographic template
/// order.
pub fn expand_template(spec: &CorpusSpec) -> Result<Vec<PromptRecord>, TaxonomyError> {
    if spec.sampling != Sampling::FullCrossProduct {
        return Err(TaxonomyError::WrongSampling("full_cross_product"));
    }
    spec.validate()?;
    let combos = CrossProduct::new(spec)?;
    if combos.remaining() > usize::MAX as u128 {
        return Err(TaxonomyError::Overflow);
    }
    combos.map(|indices| spec.template_record(&indices)).collect()
}
