//! The synthetic counting task.
//!
//! Given digits `x = x_1..x_N`, a correct answer picks a position `k` in
//! `1..=N` and emits `(k - 1, x_k, N - k)`. Every input therefore has exactly
//! `N` correct answers, and the true conditional puts mass `1/N` on each.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::Token;

pub const DEFAULT_MAX_INPUT_LEN: usize = 10;
pub const ANSWER_LEN: usize = 3;

/// A non-empty sequence of digits `0..=9`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DigitSequence(Vec<Token>);

impl DigitSequence {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("digit sequence is empty"));
        }
        if let Some(t) = tokens.iter().find(|&&t| t > 9) {
            return Err(Error::invalid(format!("token {t} is not a digit")));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for DigitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_tokens(f, &self.0)
    }
}

/// One correct output `(k - 1, x_k, N - k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Answer {
    pub position: Token,
    pub digit: Token,
    pub remaining: Token,
}

impl Answer {
    pub fn tokens(&self) -> [Token; ANSWER_LEN] {
        [self.position, self.digit, self.remaining]
    }

    pub fn to_vec(&self) -> Vec<Token> {
        self.tokens().to_vec()
    }
}

/// All correct answers for one input, ordered by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSet {
    source: DigitSequence,
    answers: Vec<Answer>,
}

impl AnswerSet {
    pub fn source(&self) -> &DigitSequence {
        &self.source
    }

    pub fn answers(&self) -> &[Answer] {
        &self.answers
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn contains(&self, y: &[Token]) -> bool {
        is_valid(&self.source, y)
    }
}

pub fn enumerate_answers(x: &DigitSequence) -> AnswerSet {
    let n = x.len();
    let answers = x
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, &digit)| Answer {
            position: i,
            digit,
            remaining: n - 1 - i,
        })
        .collect();
    AnswerSet {
        source: x.clone(),
        answers,
    }
}

/// Membership test without materialising the answer set.
pub fn is_valid(x: &DigitSequence, y: &[Token]) -> bool {
    let [position, digit, remaining] = match y {
        [a, b, c] => [*a, *b, *c],
        _ => return false,
    };
    let n = x.len();
    position < n && position + remaining + 1 == n && x.tokens()[position] == digit
}

/// `P_R(y | x)`: uniform over the answer set, zero elsewhere.
pub fn true_conditional(x: &DigitSequence, y: &[Token]) -> f64 {
    if is_valid(x, y) {
        1.0 / x.len() as f64
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountingExample {
    pub input: DigitSequence,
    pub answer: Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, valid: usize, test: usize) -> Self {
        Self { train, valid, test }
    }

    /// Parses `train,valid,test`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad split sizes {s:?}: {e}")))?;
        match parts.as_slice() {
            [a, b, c] => Ok(Self::new(*a, *b, *c)),
            _ => Err(Error::Config(format!(
                "split sizes need three values, got {s:?}"
            ))),
        }
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self::new(100_000, 10_000, 10_000)
    }
}

impl fmt::Display for SplitSizes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.valid, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountingDataset {
    pub train: Vec<CountingExample>,
    pub valid: Vec<CountingExample>,
    pub test: Vec<CountingExample>,
    pub seed: u64,
    pub max_input_len: usize,
}

/// Input lengths are uniform over `1..=max_input_len`, digits uniform over
/// `0..=9`, and the answer position uniform over the input.
pub fn generate_dataset(seed: u64, sizes: SplitSizes, max_input_len: usize) -> Result<CountingDataset> {
    if sizes.train == 0 || sizes.valid == 0 || sizes.test == 0 {
        return Err(Error::invalid(format!("split sizes must be positive, got {sizes}")));
    }
    if max_input_len == 0 {
        return Err(Error::invalid("max input length must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |count: usize| -> Vec<CountingExample> {
        (0..count)
            .map(|_| sample_example(&mut rng, max_input_len))
            .collect()
    };
    let train = split(sizes.train);
    let valid = split(sizes.valid);
    let test = split(sizes.test);
    Ok(CountingDataset {
        train,
        valid,
        test,
        seed,
        max_input_len,
    })
}

fn sample_example<R: Rng>(rng: &mut R, max_input_len: usize) -> CountingExample {
    let n = rng.random_range(1..=max_input_len);
    let tokens: Vec<Token> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let k = rng.random_range(0..n);
    let answer = Answer {
        position: k,
        digit: tokens[k],
        remaining: n - 1 - k,
    };
    CountingExample {
        input: DigitSequence(tokens),
        answer,
    }
}

impl CountingDataset {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes::new(self.train.len(), self.valid.len(), self.test.len())
    }

    /// Mean answer-set size over every input in the dataset.
    pub fn mean_answer_count(&self) -> f64 {
        let all = self.train.iter().chain(&self.valid).chain(&self.test);
        let (sum, count) = all.fold((0usize, 0usize), |(s, c), e| (s + e.input.len(), c + 1));
        sum as f64 / count as f64
    }

    /// Writes `train.txt`, `valid.txt`, `test.txt` and `manifest.txt`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, split) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            write_split(&dir.join(format!("{name}.txt")), split)?;
        }
        let manifest = format!(
            "seed={}\nsizes={}\nmax_input_len={}\nlength_distribution=uniform\n",
            self.seed,
            self.sizes(),
            self.max_input_len
        );
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.txt");
        let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut seed = None;
        let mut max_input_len = None;
        for line in manifest.lines() {
            match line.split_once('=') {
                Some(("seed", v)) => seed = v.trim().parse().ok(),
                Some(("max_input_len", v)) => max_input_len = v.trim().parse().ok(),
                _ => {}
            }
        }
        let bad = |what: &str| Error::invalid(format!("{}: missing {what}", manifest_path.display()));
        Ok(Self {
            train: read_split(&dir.join("train.txt"))?,
            valid: read_split(&dir.join("valid.txt"))?,
            test: read_split(&dir.join("test.txt"))?,
            seed: seed.ok_or_else(|| bad("seed"))?,
            max_input_len: max_input_len.ok_or_else(|| bad("max_input_len"))?,
        })
    }
}

fn write_tokens(f: &mut impl fmt::Write, tokens: &[Token]) -> fmt::Result {
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            f.write_char(' ')?;
        }
        write!(f, "{t}")?;
    }
    Ok(())
}

pub fn format_example(example: &CountingExample) -> String {
    let mut line = String::new();
    write_tokens(&mut line, example.input.tokens()).expect("write to string");
    line.push('\t');
    write_tokens(&mut line, &example.answer.tokens()).expect("write to string");
    line
}

/// Space-separated token ids.
pub fn parse_tokens(s: &str) -> Result<Vec<Token>> {
    s.split_whitespace()
        .map(|t| t.parse::<Token>().map_err(|e| Error::invalid(format!("{t:?}: {e}"))))
        .collect()
}

pub fn parse_example(line: &str) -> Result<CountingExample> {
    let (input, answer) = line
        .split_once('\t')
        .ok_or_else(|| Error::invalid(format!("missing tab in {line:?}")))?;
    let input = DigitSequence::new(parse_tokens(input)?)?;
    let answer = parse_tokens(answer)?;
    if !is_valid(&input, &answer) {
        return Err(Error::invalid(format!("answer is not valid for its input: {line:?}")));
    }
    Ok(CountingExample {
        input,
        answer: Answer {
            position: answer[0],
            digit: answer[1],
            remaining: answer[2],
        },
    })
}

fn write_split(path: &PathBuf, examples: &[CountingExample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ex in examples {
        writeln!(out, "{}", format_example(ex)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_split(path: &PathBuf) -> Result<Vec<CountingExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(parse_example(&line)?);
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(v: &[Token]) -> DigitSequence {
        DigitSequence::new(v.to_vec()).unwrap()
    }

    fn answers(x: &[Token]) -> Vec<Vec<Token>> {
        enumerate_answers(&seq(x)).answers().iter().map(Answer::to_vec).collect()
    }

    #[test]
    fn enumerates_worked_example() {
        assert_eq!(answers(&[1, 8, 3]), vec![vec![0, 1, 2], vec![1, 8, 1], vec![2, 3, 0]]);
        assert_eq!(answers(&[7]), vec![vec![0, 7, 0]]);
        assert_eq!(answers(&[2, 2]), vec![vec![0, 2, 1], vec![1, 2, 0]]);
    }

    #[test]
    fn rejects_empty_and_non_digit_inputs() {
        assert!(DigitSequence::new(vec![]).is_err());
        assert!(DigitSequence::new(vec![3, 10]).is_err());
    }

    #[test]
    fn validity() {
        let x = seq(&[1, 8, 3]);
        assert!(is_valid(&x, &[1, 8, 1]));
        assert!(!is_valid(&x, &[0, 1, 2, 0]));
        assert!(!is_valid(&x, &[9, 9, 9]));
        assert!(!is_valid(&x, &[]));
    }

    #[test]
    fn true_conditional_values() {
        let x = seq(&[1, 8, 3]);
        assert_eq!(true_conditional(&x, &[0, 1, 2]), 1.0 / 3.0);
        assert_eq!(true_conditional(&x, &[5, 5, 5]), 0.0);
        assert_eq!(true_conditional(&seq(&[7]), &[0, 7, 0]), 1.0);
    }

    #[test]
    fn tiny_dataset_is_valid_and_deterministic() {
        let a = generate_dataset(0, SplitSizes::new(1, 1, 1), 10).unwrap();
        for ex in a.train.iter().chain(&a.valid).chain(&a.test) {
            assert!(is_valid(&ex.input, &ex.answer.tokens()));
        }
        assert_eq!(a, generate_dataset(0, SplitSizes::new(1, 1, 1), 10).unwrap());
        assert!(generate_dataset(0, SplitSizes::new(0, 1, 1), 10).is_err());
        assert!(generate_dataset(0, SplitSizes::new(1, 1, 1), 0).is_err());
    }

    #[test]
    fn full_size_answer_count_diagnostic() {
        // Uniform lengths over 1..=10 give a mean of 5.5 answers, not the 4.97
        // of the original length distribution (which is unknown).
        let d = generate_dataset(0, SplitSizes::default(), 10).unwrap();
        assert_eq!(d.sizes(), SplitSizes::default());
        let mean = d.mean_answer_count();
        assert!((mean - 5.5).abs() < 0.05, "mean answer count {mean}");
    }

    #[test]
    fn dataset_files_round_trip_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_dataset(3, SplitSizes::new(20, 5, 5), 10).unwrap();
        d.write_dir(&dir.path().join("a")).unwrap();
        generate_dataset(3, SplitSizes::new(20, 5, 5), 10)
            .unwrap()
            .write_dir(&dir.path().join("b"))
            .unwrap();
        for f in ["train.txt", "valid.txt", "test.txt", "manifest.txt"] {
            let a = fs::read(dir.path().join("a").join(f)).unwrap();
            let b = fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        assert_eq!(CountingDataset::read_dir(&dir.path().join("a")).unwrap(), d);
    }

    #[test]
    fn parse_rejects_invalid_lines() {
        assert!(parse_example("1 8 3\t1 8 1").is_ok());
        assert!(parse_example("1 8 3 1 8 1").is_err());
        assert!(parse_example("1 8 3\t1 3 1").is_err());
        assert_eq!(SplitSizes::parse("10,2,2").unwrap(), SplitSizes::new(10, 2, 2));
        assert!(SplitSizes::parse("10,2").is_err());
    }

    proptest! {
        #[test]
        fn answer_set_matches_brute_force(x in prop::collection::vec(0usize..10, 1..=10)) {
            let ds = seq(&x);
            let set = enumerate_answers(&ds);
            prop_assert_eq!(set.len(), x.len());
            // brute force over every 3-digit candidate
            let mut brute = Vec::new();
            for a in 0..10 { for b in 0..10 { for c in 0..10 {
                let n = x.len();
                if a < n && a + c + 1 == n && x[a] == b { brute.push(vec![a, b, c]); }
            }}}
            let listed: Vec<Vec<Token>> = set.answers().iter().map(Answer::to_vec).collect();
            prop_assert_eq!(listed, brute);
            let mass: f64 = set.answers().iter().map(|a| true_conditional(&ds, &a.tokens())).sum();
            prop_assert!((mass - 1.0).abs() < 1e-12);
        }
    }
}
