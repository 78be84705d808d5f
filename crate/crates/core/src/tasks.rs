//! Synthetic tasks with checkable answers, scripted teachers, and the
//! teacher response cache.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::{TeacherMix, TeacherSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::{Question, Response, Source, TaskKind};
use crate::vocab::Vocab;

pub const MODULI: [u32; 3] = [7, 10, 13];
const COUNT_ALPHABET: &[u8] = b"abcde";
const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn random_string(rng: &mut Rng, alphabet: &[u8], len: usize) -> String {
    (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())] as char).collect()
}

fn make_question(vocab: &Vocab, id: u64, kind: TaskKind, prompt_text: String, answer_text: String) -> Question {
    let prompt_tokens = vocab.encode(&prompt_text).expect("generated prompts are in-alphabet");
    Question {
        id,
        prompt_text,
        prompt_tokens,
        answer_text,
        task_kind: kind,
    }
}

pub fn mod_arith_question(vocab: &Vocab, id: u64, a: u32, b: u32, m: u32) -> Question {
    make_question(
        vocab,
        id,
        TaskKind::ModArith,
        format!("what is {a} plus {b} mod {m}"),
        ((a + b) % m).to_string(),
    )
}

pub fn count_char_question(vocab: &Vocab, id: u64, c: char, s: &str) -> Question {
    let n = s.chars().filter(|&x| x == c).count();
    make_question(vocab, id, TaskKind::CountChar, format!("how many {c} in {s}"), n.to_string())
}

pub fn reverse_question(vocab: &Vocab, id: u64, s: &str) -> Question {
    make_question(
        vocab,
        id,
        TaskKind::ReverseString,
        format!("reverse {s}"),
        s.chars().rev().collect(),
    )
}

/// `count` questions of `kind` with ids `first_id..first_id + count`.
pub fn gen_tasks(vocab: &Vocab, kind: TaskKind, count: usize, first_id: u64, rng: &mut Rng) -> Vec<Question> {
    (0..count as u64)
        .map(|i| {
            let id = first_id + i;
            match kind {
                TaskKind::ModArith => {
                    let a = rng.random_range(0..100);
                    let b = rng.random_range(0..100);
                    let m = MODULI[rng.random_range(0..MODULI.len())];
                    mod_arith_question(vocab, id, a, b, m)
                }
                TaskKind::CountChar => {
                    let c = COUNT_ALPHABET[rng.random_range(0..COUNT_ALPHABET.len())] as char;
                    let len = rng.random_range(1..=12);
                    count_char_question(vocab, id, c, &random_string(rng, COUNT_ALPHABET, len))
                }
                TaskKind::ReverseString => {
                    let len = rng.random_range(1..=8);
                    reverse_question(vocab, id, &random_string(rng, LETTERS, len))
                }
            }
        })
        .collect()
}

/// A uniformly random wrong answer of the same type as the question's answer.
pub fn wrong_answer(question: &Question, rng: &mut Rng) -> String {
    let last_word = question.prompt_text.rsplit(' ').next().unwrap_or("");
    match question.task_kind {
        TaskKind::ModArith => {
            let m: u32 = last_word.parse().expect("mod_arith prompt ends with the modulus");
            let truth: u32 = question.answer_text.parse().expect("numeric answer");
            let pick = rng.random_range(0..m - 1);
            (if pick >= truth { pick + 1 } else { pick }).to_string()
        }
        TaskKind::CountChar => {
            let max = last_word.len() as u32;
            let truth: u32 = question.answer_text.parse().expect("numeric answer");
            let pick = rng.random_range(0..max);
            (if pick >= truth { pick + 1 } else { pick }).to_string()
        }
        TaskKind::ReverseString => loop {
            let s = random_string(rng, LETTERS, question.answer_text.len());
            if s != question.answer_text {
                return s;
            }
        },
    }
}

pub fn render(template: &str, answer: &str) -> String {
    template.replacen("{answer}", answer, 1)
}

/// Cached teacher responses keyed by question id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherCache {
    entries: BTreeMap<u64, Vec<(u32, Response)>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    question_id: u64,
    teacher_id: u32,
    text: String,
    tokens: Vec<usize>,
}

impl TeacherCache {
    pub fn insert(&mut self, question_id: u64, teacher_id: u32, response: Response) {
        self.entries.entry(question_id).or_default().push((teacher_id, response));
    }

    pub fn get(&self, question_id: u64) -> Option<&[(u32, Response)]> {
        self.entries.get(&question_id).map(Vec::as_slice)
    }

    pub fn contains(&self, question_id: u64) -> bool {
        self.entries.contains_key(&question_id)
    }

    pub fn question_count(&self) -> usize {
        self.entries.len()
    }

    pub fn response_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u32, &Response)> {
        self.entries
            .iter()
            .flat_map(|(&q, v)| v.iter().map(move |(t, r)| (q, *t, r)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for (question_id, teacher_id, r) in self.iter() {
            let rec = CacheRecord {
                question_id,
                teacher_id,
                text: r.text.clone(),
                tokens: r.tokens.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut cache = Self::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
            cache.insert(
                rec.question_id,
                rec.teacher_id,
                Response {
                    tokens: rec.tokens,
                    text: rec.text,
                    source: Source::Teacher(rec.teacher_id),
                    behavior_logprobs: None,
                },
            );
        }
        Ok(cache)
    }
}

/// Renders `responses_per_teacher` responses per teacher for every question.
pub fn build_teacher_cache(
    vocab: &Vocab,
    teachers: &[TeacherSpec],
    questions: &[Question],
    responses_per_teacher: usize,
    max_len: usize,
    rng: &mut Rng,
) -> Result<TeacherCache> {
    let mut cache = TeacherCache::default();
    for q in questions {
        for t in teachers {
            for _ in 0..responses_per_teacher {
                let answer = if rng.random_bool(t.correctness_rate) {
                    q.answer_text.clone()
                } else {
                    wrong_answer(q, rng)
                };
                let text = render(&t.style_template, &answer);
                let r = Response::from_text(vocab, &text, Source::Teacher(t.teacher_id), max_len)?;
                cache.insert(q.id, t.teacher_id, r);
            }
        }
    }
    Ok(cache)
}

fn draw_from(pool: &[&Response], count: usize, rng: &mut Rng) -> Vec<Response> {
    if pool.len() >= count {
        pool.choose_multiple(rng, count).map(|r| (*r).clone()).collect()
    } else {
        (0..count).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
    }
}

/// Draws `g` cached teacher responses for one question.
///
/// Draws are without replacement while the pool is large enough, and fall
/// back to sampling with replacement when a teacher holds fewer than its share.
pub fn extract_group(cache: &TeacherCache, question_id: u64, g: usize, mix: TeacherMix, rng: &mut Rng) -> Result<Vec<Response>> {
    let entries = cache.get(question_id).ok_or(Error::MissingTeacherResponses(question_id))?;
    let mut by_teacher: BTreeMap<u32, Vec<&Response>> = BTreeMap::new();
    for (t, r) in entries {
        by_teacher.entry(*t).or_default().push(r);
    }
    match mix {
        TeacherMix::Single(id) => {
            let pool = by_teacher.get(&id).ok_or(Error::MissingTeacherResponses(question_id))?;
            Ok(draw_from(pool, g, rng))
        }
        TeacherMix::Both => {
            let teachers: Vec<&Vec<&Response>> = by_teacher.values().collect();
            let n = teachers.len();
            let mut drawn: Vec<std::vec::IntoIter<Response>> = teachers
                .iter()
                .enumerate()
                .map(|(i, pool)| {
                    let share = g / n + usize::from(i < g % n);
                    draw_from(pool, share, rng).into_iter()
                })
                .collect();
            Ok((0..g).map(|slot| drawn[slot % n].next().expect("share covers slot")).collect())
        }
    }
}

/// Writes questions as JSON lines.
pub fn save_questions(path: &Path, questions: &[Question]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for q in questions {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_questions(path: &Path) -> Result<Vec<Question>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_teachers;
    use crate::judge::oracle_judge;
    use crate::rng::rng_stream;

    #[test]
    fn task_examples() {
        let v = Vocab::new();
        assert_eq!(mod_arith_question(&v, 0, 3, 4, 10).answer_text, "7");
        assert_eq!(count_char_question(&v, 0, 'a', "abca").answer_text, "2");
        assert_eq!(reverse_question(&v, 0, "abc").answer_text, "cba");
        assert_eq!(mod_arith_question(&v, 0, 3, 4, 10).prompt_text, "what is 3 plus 4 mod 10");
    }

    #[test]
    fn generated_tasks_are_well_formed() {
        let v = Vocab::new();
        let mut rng = rng_stream(0, "tasks", 0);
        for kind in TaskKind::ALL {
            let qs = gen_tasks(&v, kind, 300, 1000, &mut rng);
            assert_eq!(qs.len(), 300);
            for (i, q) in qs.iter().enumerate() {
                assert_eq!(q.id, 1000 + i as u64);
                assert_eq!(q.prompt_tokens, v.encode(&q.prompt_text).unwrap());
                assert!(!q.answer_text.is_empty());
                assert!(v.encode(&q.answer_text).is_ok());
                assert_eq!(q.task_kind, kind);
            }
        }
    }

    #[test]
    fn wrong_answers_are_wrong_and_same_type() {
        let v = Vocab::new();
        let mut rng = rng_stream(1, "tasks", 0);
        for kind in TaskKind::ALL {
            for q in gen_tasks(&v, kind, 200, 0, &mut rng) {
                let w = wrong_answer(&q, &mut rng);
                assert_ne!(w, q.answer_text);
                match kind {
                    TaskKind::ModArith => {
                        let m: u32 = q.prompt_text.rsplit(' ').next().unwrap().parse().unwrap();
                        assert!(w.parse::<u32>().unwrap() < m);
                    }
                    TaskKind::CountChar => assert!(w.parse::<u32>().is_ok()),
                    TaskKind::ReverseString => assert_eq!(w.len(), q.answer_text.len()),
                }
            }
        }
    }

    #[test]
    fn cache_sizes_and_correctness() {
        let v = Vocab::new();
        let mut rng = rng_stream(2, "tasks", 0);
        let qs = gen_tasks(&v, TaskKind::ModArith, 10, 0, &mut rng);
        let mut teachers = default_teachers();
        for t in &mut teachers {
            t.correctness_rate = 1.0;
        }
        let cache = build_teacher_cache(&v, &teachers, &qs, 4, 64, &mut rng).unwrap();
        assert_eq!(cache.response_count(), 80);
        for q in &qs {
            for (_, r) in cache.get(q.id).unwrap() {
                assert!(oracle_judge(q, &q.answer_text, &r.text).correct, "{}", r.text);
                assert!(r.is_terminated());
            }
        }
    }

    #[test]
    fn correctness_rate_binomial_bound() {
        let v = Vocab::new();
        let mut rng = rng_stream(3, "tasks", 0);
        let qs = gen_tasks(&v, TaskKind::ModArith, 625, 0, &mut rng);
        let teachers = vec![TeacherSpec::new(0, "the answer is {answer}.", 0.95)];
        let cache = build_teacher_cache(&v, &teachers, &qs, 16, 64, &mut rng).unwrap();
        assert_eq!(cache.response_count(), 10_000);
        let accepted = qs
            .iter()
            .flat_map(|q| cache.get(q.id).unwrap().iter().map(move |(_, r)| oracle_judge(q, &q.answer_text, &r.text).correct))
            .filter(|&c| c)
            .count();
        let frac = accepted as f64 / 10_000.0;
        assert!((0.94..=0.96).contains(&frac), "{frac}");
    }

    #[test]
    fn extract_group_mix_rules() {
        let v = Vocab::new();
        let mut rng = rng_stream(4, "tasks", 0);
        let qs = gen_tasks(&v, TaskKind::ReverseString, 3, 0, &mut rng);
        let cache = build_teacher_cache(&v, &default_teachers(), &qs, 16, 64, &mut rng).unwrap();

        let g = extract_group(&cache, qs[0].id, 4, TeacherMix::Both, &mut rng).unwrap();
        let t0 = g.iter().filter(|r| r.source == Source::Teacher(0)).count();
        assert_eq!((g.len(), t0), (4, 2));

        // distinct positions in the pool: tag every cached response uniquely
        let mut single = TeacherCache::default();
        for i in 0..16 {
            let r = Response::from_text(&v, &format!("the answer is {i}."), Source::Teacher(0), 64).unwrap();
            single.insert(7, 0, r);
        }
        let g = extract_group(&single, 7, 4, TeacherMix::Single(0), &mut rng).unwrap();
        let mut texts: Vec<_> = g.iter().map(|r| r.text.clone()).collect();
        texts.sort();
        texts.dedup();
        assert_eq!(texts.len(), 4);

        assert!(matches!(
            extract_group(&cache, 999, 4, TeacherMix::Both, &mut rng),
            Err(Error::MissingTeacherResponses(999))
        ));
    }

    #[test]
    fn extraction_is_deterministic() {
        let v = Vocab::new();
        let qs = gen_tasks(&v, TaskKind::CountChar, 2, 0, &mut rng_stream(5, "tasks", 0));
        let cache = build_teacher_cache(&v, &default_teachers(), &qs, 16, 64, &mut rng_stream(5, "cache", 0)).unwrap();
        let a = extract_group(&cache, qs[1].id, 4, TeacherMix::Both, &mut rng_stream(5, "extract", 1)).unwrap();
        let b = extract_group(&cache, qs[1].id, 4, TeacherMix::Both, &mut rng_stream(5, "extract", 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_pools_fall_back_to_replacement() {
        let v = Vocab::new();
        let qs = gen_tasks(&v, TaskKind::ModArith, 1, 0, &mut rng_stream(6, "tasks", 0));
        let cache = build_teacher_cache(&v, &default_teachers(), &qs, 1, 64, &mut rng_stream(6, "cache", 0)).unwrap();
        let g = extract_group(&cache, qs[0].id, 4, TeacherMix::Both, &mut rng_stream(6, "x", 0)).unwrap();
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn cache_round_trip() {
        let v = Vocab::new();
        let qs = gen_tasks(&v, TaskKind::ModArith, 5, 0, &mut rng_stream(7, "tasks", 0));
        let cache = build_teacher_cache(&v, &default_teachers(), &qs, 3, 64, &mut rng_stream(7, "cache", 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        cache.save(&path).unwrap();
        assert_eq!(TeacherCache::load(&path).unwrap(), cache);
        let qpath = dir.path().join("q.jsonl");
        save_questions(&qpath, &qs).unwrap();
        assert_eq!(load_questions(&qpath).unwrap(), qs);
    }
}
