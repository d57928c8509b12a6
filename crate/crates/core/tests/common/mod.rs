//! Synthetic corpora and helpers shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use poincare_xling::corpus::SentencePair;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PARENTS: usize = 5;
pub const CHILDREN_PER_PARENT: usize = 5;

pub fn parent(i: usize) -> String {
    format!("parent{i}")
}

pub fn child(p: usize, c: usize) -> String {
    format!("child{p}x{c}")
}

/// German side of a word: a distinct surface form.
pub fn german(word: &str) -> String {
    format!("{word}de")
}

/// Toy hierarchy: each sentence holds a parent, one of its five children and
/// a second, different parent, shuffled. Parents thus co-occur with many
/// distinct words and are ten times as frequent as each child. The target
/// side is the word-by-word translation.
pub fn hierarchy_corpus(sentences: usize, seed: u64) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|i| {
            let p = i % PARENTS;
            let q = (p + rng.random_range(1..PARENTS)) % PARENTS;
            let c = rng.random_range(0..CHILDREN_PER_PARENT);
            let mut src = vec![parent(p), child(p, c), parent(q)];
            src.shuffle(&mut rng);
            let tgt = src.iter().map(|w| german(w)).collect();
            SentencePair { src, tgt }
        })
        .collect()
}

pub const XL_TYPES: usize = 20;

pub fn xl_word(i: usize) -> String {
    format!("w{i}")
}

/// The translation of a word in the toy corpora.
pub fn translation(word: &str) -> String {
    match word.strip_suffix("de") {
        Some(en) => en.to_string(),
        None => german(word),
    }
}

/// Toy parallel corpus over 20 word types: each sentence is a random walk of
/// 5 to 8 steps where word `i` is followed by `i+1` or `i+3` (mod 20), so
/// every type has its own neighbourhood. The target side is an exact 1:1
/// translation in the same order.
pub fn cross_lingual_corpus(sentences: usize, seed: u64) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|_| {
            let len = rng.random_range(5..=8);
            let mut w = rng.random_range(0..XL_TYPES);
            let mut src = Vec::with_capacity(len);
            for _ in 0..len {
                src.push(xl_word(w));
                w = (w + [1, 3][rng.random_range(0..2)]) % XL_TYPES;
            }
            let tgt = src.iter().map(|w| german(w)).collect();
            SentencePair { src, tgt }
        })
        .collect()
}

/// Writes the two sides as line-aligned text files.
pub fn write_corpus(dir: &Path, name: &str, pairs: &[SentencePair]) -> (PathBuf, PathBuf) {
    let src = dir.join(format!("{name}.en"));
    let tgt = dir.join(format!("{name}.de"));
    let join = |side: &dyn Fn(&SentencePair) -> &Vec<String>| {
        pairs
            .iter()
            .map(|p| side(p).join(" ") + "\n")
            .collect::<String>()
    };
    fs::write(&src, join(&|p| &p.src)).unwrap();
    fs::write(&tgt, join(&|p| &p.tgt)).unwrap();
    (src, tgt)
}

/// Runs the binary in-process through the library entry point.
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("poincare-xling").chain(args.iter().copied());
    let code = poincare_xling::cli::run_command(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Value of `key=value` in a report line.
pub fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

/// A random point drawn uniformly in direction with norm uniform in [0, max_norm).
pub fn random_ball_point<R: Rng>(rng: &mut R, dim: usize, max_norm: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = rng.random_range(0.0..max_norm);
    v.iter_mut().for_each(|x| *x *= r / n);
    v
}
