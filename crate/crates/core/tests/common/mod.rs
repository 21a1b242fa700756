//! Scripted service doubles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use fairgen_core::services::{
    ClientError, GenerationClient, GenerationRequest, GenerationResponse, VqaClient, VqaRequest, VqaResponse,
};
use fairgen_core::taxonomy::{AttributeAxis, CorpusSpec};

/// Generator whose failures are scripted per `(prompt, seed)`. Every call is
/// logged, and `cancel_after` raises a flag once that many calls succeeded.
#[derive(Default)]
pub struct ScriptedGenerator {
    pub script: Mutex<HashMap<(String, u64), VecDeque<ClientError>>>,
    pub calls: Mutex<Vec<(String, u64)>>,
    pub successes: AtomicUsize,
    pub cancel_after: Option<(usize, Arc<AtomicBool>)>,
}

impl ScriptedGenerator {
    pub fn fail(&self, prompt: &str, seed: u64, errors: impl IntoIterator<Item = ClientError>) {
        self.script.lock().unwrap().entry((prompt.to_string(), seed)).or_default().extend(errors);
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    /// Successful calls per `(prompt, seed)`.
    pub fn successes_per_job(&self) -> BTreeMap<(String, u64), usize> {
        let mut out = BTreeMap::new();
        let calls = self.calls.lock().unwrap();
        for k in calls.iter() {
            *out.entry(k.clone()).or_insert(0) += 1;
        }
        out
    }
}

pub fn image_ref(prompt: &str, seed: u64) -> String {
    format!("mock://{}/{seed}.png", prompt.replace(' ', "_"))
}

impl GenerationClient for ScriptedGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        let key = (request.prompt.clone(), request.seed);
        let scripted = self.script.lock().unwrap().get_mut(&key).and_then(|q| q.pop_front());
        if let Some(err) = scripted {
            return Err(err);
        }
        self.calls.lock().unwrap().push(key);
        let n = self.successes.fetch_add(1, Ordering::SeqCst) + 1;
        if let Some((limit, flag)) = &self.cancel_after {
            if n >= *limit {
                flag.store(true, Ordering::SeqCst);
            }
        }
        Ok(GenerationResponse { image_ref: image_ref(&request.prompt, request.seed) })
    }
}

/// VQA double answering from the image reference: `woman` images are female
/// and every fourth image is dark-skinned, others light or medium.
#[derive(Default)]
pub struct ScriptedVqa {
    pub calls: AtomicUsize,
}

impl VqaClient for ScriptedVqa {
    fn ask(&self, request: &VqaRequest) -> Result<VqaResponse, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let r = &request.image_ref;
        let answer = if request.question.contains("male or female") {
            if r.contains("woman") { "female" } else { "male" }
        } else {
            let seed: u64 = r.rsplit('/').next().unwrap().trim_end_matches(".png").parse().unwrap();
            match (seed + r.len() as u64) % 4 {
                0 => "black",
                1 => "medium skin",
                _ => "light",
            }
        };
        Ok(VqaResponse { answer: answer.to_string() })
    }
}

/// Two professions by two genders: four prompts.
pub fn four_prompt_spec() -> CorpusSpec {
    let mut spec = CorpusSpec::seven_qualifier(["Korean"], ["doctor", "chef"]);
    spec.axes = vec![
        AttributeAxis::new("gender", ["woman", "man"], true),
        AttributeAxis::new("profession", ["doctor", "chef"], false),
    ];
    spec.template = vec!["gender".into(), "profession".into()];
    spec
}
