//! Seeded stratified sampling over the cross product.
//!
//! Every protected axis ends up within one record of a uniform split. The
//! protected sub-grid is walked in an order whose every prefix is balanced
//! on each protected axis; each visited cell then receives its share of
//! records, filled with distinct, uniformly drawn combinations of the
//! unprotected axes.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusSpec, PromptRecord, Sampling, TaxonomyError};

pub fn sample_corpus(spec: &CorpusSpec) -> Result<Vec<PromptRecord>, TaxonomyError> {
    if spec.sampling != Sampling::Stratified {
        return Err(TaxonomyError::WrongSampling("stratified"));
    }
    spec.validate()?;
    let target = spec.target_size.ok_or(TaxonomyError::MissingTargetSize)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut tuples = Vec::new();
    for (allowed, count) in strata(spec, target)? {
        tuples.extend(sample_stratum(spec, &allowed, count, &mut rng)?);
    }

    let order = spec.iteration_order();
    tuples.sort_by(|a, b| order.iter().map(|&i| a[i]).cmp(order.iter().map(|&i| b[i])));
    tuples.iter().map(|t| spec.template_record(t)).collect()
}

type Allowed = Vec<Vec<usize>>;

/// Split the target over quota strata plus the residual stratum.
fn strata(spec: &CorpusSpec, target: u64) -> Result<Vec<(Allowed, u64)>, TaxonomyError> {
    let all: Allowed = spec.axes.iter().map(|a| (0..a.values.len()).collect()).collect();
    let Some((axis_name, quota)) = spec.quotas.iter().next() else {
        return Ok(vec![(all, target)]);
    };
    let invalid = |reason: String| TaxonomyError::InvalidQuota { axis: axis_name.clone(), reason };
    let axis_idx = spec
        .axes
        .iter()
        .position(|a| &a.name == axis_name)
        .ok_or_else(|| invalid("no such axis".into()))?;
    let axis = &spec.axes[axis_idx];

    let mut out = Vec::new();
    let mut residual_values = Vec::new();
    let mut fixed = 0u64;
    for (vi, value) in axis.values.iter().enumerate() {
        match quota.get(value) {
            Some(&q) => {
                let mut allowed = all.clone();
                allowed[axis_idx] = vec![vi];
                fixed = fixed.checked_add(q).ok_or(TaxonomyError::Overflow)?;
                out.push((allowed, q));
            }
            None => residual_values.push(vi),
        }
    }
    let rest = target
        .checked_sub(fixed)
        .ok_or_else(|| invalid(format!("quotas sum to {fixed}, above target_size {target}")))?;
    if rest > 0 {
        if residual_values.is_empty() {
            return Err(invalid(format!("{rest} records left but every value has a quota")));
        }
        let mut allowed = all;
        allowed[axis_idx] = residual_values;
        out.push((allowed, rest));
    }
    for (allowed, count) in &out {
        let capacity = allowed
            .iter()
            .try_fold(1u128, |acc, v| acc.checked_mul(v.len() as u128))
            .ok_or(TaxonomyError::Overflow)?;
        if u128::from(*count) > capacity {
            return Err(invalid(format!("stratum needs {count} records but holds {capacity}")));
        }
    }
    Ok(out)
}

fn sample_stratum(
    spec: &CorpusSpec,
    allowed: &Allowed,
    count: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>, TaxonomyError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let (protected, free): (Vec<usize>, Vec<usize>) = (0..spec.axes.len()).partition(|&i| spec.axes[i].is_protected);

    // Relabel protected values at random; balance is invariant under relabeling.
    let relabeled: Vec<Vec<usize>> = protected
        .iter()
        .map(|&axis| {
            let mut values = allowed[axis].clone();
            values.shuffle(rng);
            values
        })
        .collect();
    let sizes: Vec<u128> = relabeled.iter().map(|v| v.len() as u128).collect();
    let cells: u128 = sizes.iter().try_fold(1u128, |acc, &n| acc.checked_mul(n)).ok_or(TaxonomyError::Overflow)?;
    let free_space: u128 = free
        .iter()
        .try_fold(1u128, |acc, &i| acc.checked_mul(allowed[i].len() as u128))
        .ok_or(TaxonomyError::Overflow)?;
    let free_space = usize::try_from(free_space).map_err(|_| TaxonomyError::Overflow)?;

    let count = u128::from(count);
    let per_cell = count / cells;
    let extra = count % cells;
    let visited = if per_cell > 0 { cells } else { extra };

    let mut out = Vec::with_capacity(count as usize);
    for position in 0..visited {
        let take = per_cell + u128::from(position < extra);
        let coords = balanced_cell(position, &sizes);
        let take = usize::try_from(take).map_err(|_| TaxonomyError::Overflow)?;
        for flat in index::sample(rng, free_space, take) {
            let mut tuple = vec![0usize; spec.axes.len()];
            for (k, &axis) in protected.iter().enumerate() {
                tuple[axis] = relabeled[k][coords[k]];
            }
            let mut rem = flat;
            for &axis in free.iter().rev() {
                let radix = allowed[axis].len();
                tuple[axis] = allowed[axis][rem % radix];
                rem /= radix;
            }
            out.push(tuple);
        }
    }
    Ok(out)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Cell visited at `position` (< product of `sizes`) in a bijective walk of
/// the grid such that every prefix of the walk is balanced to within one on
/// each coordinate.
///
/// Built one axis at a time: with `prev` the size of the grid over the
/// earlier axes and `n` the size of the next one, position `i` maps to
/// `(walk(i mod prev), (i + i / lcm(prev, n)) mod n)`.
pub(crate) fn balanced_cell(position: u128, sizes: &[u128]) -> Vec<usize> {
    let mut coords = vec![0usize; sizes.len()];
    if sizes.is_empty() {
        return coords;
    }
    let mut prefix = Vec::with_capacity(sizes.len());
    let mut acc = 1u128;
    for &n in sizes {
        prefix.push(acc);
        acc *= n;
    }
    let mut i = position;
    for axis in (0..sizes.len()).rev() {
        let n = sizes[axis];
        let prev = prefix[axis];
        let lcm = prev / gcd(prev, n) * n;
        coords[axis] = ((i + i / lcm) % n) as usize;
        i %= prev;
    }
    coords
}
