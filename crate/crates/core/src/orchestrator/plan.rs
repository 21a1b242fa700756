use std::collections::BTreeSet;

use super::{GenerationJob, OrchestratorError};
use crate::taxonomy::PromptRecord;

/// One job per `(prompt, seed)`, seeds `seed_base, seed_base + 1, ...`
/// shared by every prompt. Prompt-major order.
pub fn plan_eval_jobs(
    prompts: &[PromptRecord],
    seeds_per_prompt: u32,
    seed_base: u64,
) -> Result<Vec<GenerationJob>, OrchestratorError> {
    if prompts.is_empty() {
        return Err(OrchestratorError::EmptyPrompts);
    }
    if seeds_per_prompt == 0 {
        return Err(OrchestratorError::NoSeeds);
    }
    seed_base
        .checked_add(u64::from(seeds_per_prompt) - 1)
        .ok_or(OrchestratorError::SeedOverflow)?;
    let mut seen = BTreeSet::new();
    for p in prompts {
        if !seen.insert(p.prompt_id.as_str()) {
            return Err(OrchestratorError::DuplicatePrompt(p.prompt_id.clone()));
        }
    }
    Ok(prompts
        .iter()
        .flat_map(|p| (0..u64::from(seeds_per_prompt)).map(move |i| GenerationJob::new(&p.prompt_id, &p.text, seed_base + i)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::JobStatus;
    use crate::taxonomy::{Assignment, Origin};
    use proptest::prelude::*;

    pub(crate) fn prompts(n: usize) -> Vec<PromptRecord> {
        (0..n)
            .map(|i| {
                let assignment: Assignment = [("profession".to_string(), format!("job{i}"))].into();
                PromptRecord::new(format!("a job{i}"), assignment, Origin::Template, None)
            })
            .collect()
    }

    #[test]
    fn two_prompts_three_seeds() {
        let jobs = plan_eval_jobs(&prompts(2), 3, 100).unwrap();
        assert_eq!(jobs.len(), 6);
        let seeds_a: Vec<u64> = jobs[..3].iter().map(|j| j.seed).collect();
        let seeds_b: Vec<u64> = jobs[3..].iter().map(|j| j.seed).collect();
        assert_eq!(seeds_a, [100, 101, 102]);
        assert_eq!(seeds_a, seeds_b);
        assert!(jobs.iter().all(|j| j.status == JobStatus::Pending && j.attempt == 0));
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        assert!(matches!(plan_eval_jobs(&[], 10, 0), Err(OrchestratorError::EmptyPrompts)));
        let mut p = prompts(2);
        p.push(p[0].clone());
        assert!(matches!(plan_eval_jobs(&p, 10, 0), Err(OrchestratorError::DuplicatePrompt(_))));
        assert!(matches!(plan_eval_jobs(&prompts(1), 2, u64::MAX), Err(OrchestratorError::SeedOverflow)));
    }

    proptest! {
        #[test]
        fn prop_plan_cardinality(n in 1usize..40, seeds in 1u32..15, base in 0u64..1_000_000) {
            let jobs = plan_eval_jobs(&prompts(n), seeds, base).unwrap();
            prop_assert_eq!(jobs.len(), n * seeds as usize);
            let unique: BTreeSet<_> = jobs.iter().map(|j| (j.prompt_id.clone(), j.seed)).collect();
            prop_assert_eq!(unique.len(), jobs.len());
        }
    }
}
