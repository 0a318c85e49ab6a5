//! Seeded synthetic data for tests and benchmarks: random vectors, Gaussian
//! blobs, and small dialogue corpora whose matching signal is known.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Candidate, DialogueSession, EvalSession, NonparallelSentence, Utterance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n * dim` values uniform in [-1, 1).
pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    (0..n * dim).map(|_| r.random_range(-1.0f32..1.0)).collect()
}

/// `n` points around `blobs` standard normal centers, each coordinate
/// perturbed by `spread` times standard normal noise. Blob of point i is
/// drawn uniformly.
pub fn gaussian_blobs(n: usize, dim: usize, blobs: usize, spread: f32, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    let centers: Vec<f32> = (0..blobs * dim).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = r.random_range(0..blobs);
        for j in 0..dim {
            let noise: f32 = StandardNormal.sample(&mut r);
            out.push(centers[c * dim + j] + spread * noise);
        }
    }
    out
}

fn utt(words: &[String]) -> Utterance {
    Utterance::new(words.join(" ")).expect("generated utterances are never empty")
}

fn fillers(r: &mut impl Rng, pool: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| pool.choose(r).expect("non-empty filler pool").clone()).collect()
}

fn with_keyword(r: &mut impl Rng, mut words: Vec<String>, keyword: &str) -> Utterance {
    let at = r.random_range(0..=words.len());
    words.insert(at, keyword.to_string());
    utt(&words)
}

fn pool(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Draws an eval candidate list: the gold at a random position among
/// `distractors`.
fn candidate_list(r: &mut impl Rng, gold: Utterance, distractors: Vec<Utterance>) -> Vec<Candidate> {
    let mut c: Vec<Candidate> = distractors.into_iter().map(|text| Candidate { text, rel: 0.0 }).collect();
    let at = r.random_range(0..=c.len());
    c.insert(at, Candidate { text: gold, rel: 1.0 });
    c
}

/// Single-turn pairs where the response repeats one keyword of its context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeywordSpec {
    pub keywords: usize,
    pub fillers: usize,
    pub train_pairs: usize,
    pub test_sessions: usize,
    pub candidates: usize,
    pub context_fillers: usize,
    pub response_fillers: usize,
    pub seed: u64,
}

impl Default for KeywordSpec {
    fn default() -> Self {
        KeywordSpec {
            keywords: 500,
            fillers: 1497,
            train_pairs: 20_000,
            test_sessions: 1000,
            candidates: 10,
            context_fillers: 2,
            response_fillers: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeywordCorpus {
    /// Two-utterance sessions: context then response.
    pub train: Vec<DialogueSession>,
    /// Held-out sessions with distinct response texts.
    pub test: Vec<DialogueSession>,
    /// Re-rank view of `test`: the gold plus `candidates - 1` test responses
    /// carrying other keywords.
    pub eval: Vec<EvalSession>,
    pub fillers: Vec<String>,
}

impl KeywordCorpus {
    pub fn vocab_size(spec: &KeywordSpec) -> usize {
        spec.keywords + spec.fillers + 3
    }
}

pub fn keyword_corpus(spec: &KeywordSpec) -> KeywordCorpus {
    assert!(spec.keywords >= spec.candidates && spec.fillers > 0 && spec.candidates >= 1);
    let mut r = rng(spec.seed);
    let keywords = pool("kw", spec.keywords);
    let filler_pool = pool("w", spec.fillers);
    let session = |r: &mut ChaCha8Rng, id: String, kw: usize| {
        let ctx = fillers(r, &filler_pool, spec.context_fillers);
        let res = fillers(r, &filler_pool, spec.response_fillers);
        DialogueSession {
            id,
            utterances: vec![with_keyword(r, ctx, &keywords[kw]), with_keyword(r, res, &keywords[kw])],
        }
    };
    let train = (0..spec.train_pairs)
        .map(|i| {
            let kw = r.random_range(0..spec.keywords);
            session(&mut r, format!("train-{i}"), kw)
        })
        .collect();

    let mut test = Vec::with_capacity(spec.test_sessions);
    let mut test_kw = Vec::with_capacity(spec.test_sessions);
    let mut seen = HashSet::new();
    while test.len() < spec.test_sessions {
        let kw = r.random_range(0..spec.keywords);
        let s = session(&mut r, format!("test-{}", test.len()), kw);
        if seen.insert(s.utterances[1].to_string()) {
            test.push(s);
            test_kw.push(kw);
        }
    }

    let eval = (0..test.len())
        .map(|i| {
            let mut distractors = Vec::with_capacity(spec.candidates - 1);
            let mut used = HashSet::from([test_kw[i]]);
            while distractors.len() + 1 < spec.candidates {
                let j = r.random_range(0..test.len());
                if used.insert(test_kw[j]) {
                    distractors.push(test[j].utterances[1].clone());
                }
            }
            EvalSession {
                id: test[i].id.clone(),
                context: vec![test[i].utterances[0].clone()],
                candidates: candidate_list(&mut r, test[i].utterances[1].clone(), distractors),
            }
        })
        .collect();
    KeywordCorpus {
        train,
        test,
        eval,
        fillers: filler_pool,
    }
}

/// Unpaired sentences: the first half built from in-domain filler words,
/// the second half from words the encoder has never seen (plus one filler).
pub fn distractor_sentences(n: usize, fillers_pool: &[String], len: usize, seed: u64) -> (Vec<NonparallelSentence>, Vec<NonparallelSentence>) {
    let mut r = rng(seed);
    let inside = (0..n / 2)
        .map(|i| NonparallelSentence {
            id: format!("in-{i}"),
            text: utt(&fillers(&mut r, fillers_pool, len)),
        })
        .collect();
    let outside = (0..n - n / 2)
        .map(|i| {
            let mut words: Vec<String> = (0..len.saturating_sub(1)).map(|_| format!("oov{}", r.random_range(0..100_000))).collect();
            words.extend(fillers(&mut r, fillers_pool, 1));
            words.shuffle(&mut r);
            NonparallelSentence {
                id: format!("out-{i}"),
                text: utt(&words),
            }
        })
        .collect();
    (inside, outside)
}

/// Multi-turn sessions where consecutive utterances share a link keyword:
/// utterance t carries links t and t + 1, so each response repeats a keyword
/// of the turn right before it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiTurnSpec {
    pub keywords: usize,
    pub fillers: usize,
    pub train_sessions: usize,
    pub test_sessions: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for MultiTurnSpec {
    fn default() -> Self {
        MultiTurnSpec {
            keywords: 1000,
            fillers: 200,
            train_sessions: 3000,
            test_sessions: 500,
            min_turns: 4,
            max_turns: 8,
            candidates: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiTurnCorpus {
    pub train: Vec<DialogueSession>,
    /// Each test session cut at a random turn; candidates are the true next
    /// utterance plus utterances of other test sessions.
    pub eval: Vec<EvalSession>,
}

pub fn multi_turn_corpus(spec: &MultiTurnSpec) -> MultiTurnCorpus {
    assert!(spec.min_turns >= 2 && spec.max_turns >= spec.min_turns && spec.keywords > spec.max_turns);
    let mut r = rng(spec.seed);
    let keywords = pool("kw", spec.keywords);
    let filler_pool = pool("w", spec.fillers);
    let session = |r: &mut ChaCha8Rng, id: String| {
        let m = r.random_range(spec.min_turns..=spec.max_turns);
        let links: Vec<&String> = keywords.choose_multiple(r, m + 1).collect();
        let utterances = (0..m)
            .map(|t| {
                let mut words = fillers(r, &filler_pool, 2);
                words.push(links[t].clone());
                words.push(links[t + 1].clone());
                words.shuffle(r);
                utt(&words)
            })
            .collect();
        DialogueSession { id, utterances }
    };
    let train = (0..spec.train_sessions).map(|i| session(&mut r, format!("train-{i}"))).collect();
    let test: Vec<DialogueSession> = (0..spec.test_sessions).map(|i| session(&mut r, format!("test-{i}"))).collect();
    let eval = test
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cut = r.random_range(1..s.utterances.len());
            let distractors = (1..spec.candidates)
                .map(|_| {
                    let j = loop {
                        let j = r.random_range(0..test.len());
                        if j != i {
                            break j;
                        }
                    };
                    test[j].utterances.choose(&mut r).expect("non-empty session").clone()
                })
                .collect();
            EvalSession {
                id: s.id.clone(),
                context: s.utterances[..cut].to_vec(),
                candidates: candidate_list(&mut r, s.utterances[cut].clone(), distractors),
            }
        })
        .collect();
    MultiTurnCorpus { train, eval }
}

/// Topics with two disjoint phrasings. Every topic has one response and one
/// stored context written in the A phrasing; training covers both phrasings,
/// and B-phrased queries share no token with their gold's stored context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialSpec {
    pub topics: usize,
    pub fillers: usize,
    /// Training sessions per topic and phrasing.
    pub train_per_form: usize,
    /// Fraction of test queries in the B phrasing.
    pub b_fraction: f64,
    pub seed: u64,
}

impl Default for AdversarialSpec {
    fn default() -> Self {
        AdversarialSpec {
            topics: 500,
            fillers: 300,
            train_per_form: 8,
            b_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialQuery {
    pub context: Vec<Utterance>,
    pub topic: usize,
    pub b_form: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialCorpus {
    pub train: Vec<DialogueSession>,
    /// Response of topic i.
    pub responses: Vec<Utterance>,
    /// The one context per topic the recall module indexes.
    pub stored_contexts: Vec<Utterance>,
    pub queries: Vec<AdversarialQuery>,
}

pub fn adversarial_corpus(spec: &AdversarialSpec) -> AdversarialCorpus {
    let mut r = rng(spec.seed);
    let filler_pool = pool("w", spec.fillers);
    let a_words = pool("a", spec.topics);
    let b_words = pool("b", spec.topics);
    let res_words = pool("r", spec.topics);
    let context = |r: &mut ChaCha8Rng, topic: usize, b_form: bool, avoid: &HashSet<String>| {
        let allowed: Vec<&String> = filler_pool.iter().filter(|w| !avoid.contains(*w)).collect();
        let words: Vec<String> = (0..3).map(|_| (*allowed.choose(r).expect("fillers left")).clone()).collect();
        with_keyword(r, words, if b_form { &b_words[topic] } else { &a_words[topic] })
    };
    let none = HashSet::new();

    let responses: Vec<Utterance> = (0..spec.topics)
        .map(|t| {
            let words = fillers(&mut r, &filler_pool, 2);
            with_keyword(&mut r, words, &res_words[t])
        })
        .collect();
    let stored_contexts: Vec<Utterance> = (0..spec.topics).map(|t| context(&mut r, t, false, &none)).collect();

    let mut train = Vec::new();
    for t in 0..spec.topics {
        train.push(DialogueSession {
            id: format!("stored-{t}"),
            utterances: vec![stored_contexts[t].clone(), responses[t].clone()],
        });
        for (form, b_form) in [("a", false), ("b", true)] {
            for i in 0..spec.train_per_form {
                train.push(DialogueSession {
                    id: format!("train-{t}-{form}{i}"),
                    utterances: vec![context(&mut r, t, b_form, &none), responses[t].clone()],
                });
            }
        }
    }

    let n_b = (spec.b_fraction * spec.topics as f64).round() as usize;
    let mut order: Vec<usize> = (0..spec.topics).collect();
    order.shuffle(&mut r);
    let b_topics: HashSet<usize> = order[..n_b.min(spec.topics)].iter().copied().collect();
    let queries = (0..spec.topics)
        .map(|t| {
            let b_form = b_topics.contains(&t);
            let avoid: HashSet<String> = if b_form {
                crate::corpus::words(stored_contexts[t].as_str()).collect()
            } else {
                HashSet::new()
            };
            AdversarialQuery {
                context: vec![context(&mut r, t, b_form, &avoid)],
                topic: t,
                b_form,
            }
        })
        .collect();
    AdversarialCorpus {
        train,
        responses,
        stored_contexts,
        queries,
    }
}
