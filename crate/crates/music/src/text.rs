//! The nested-list feature block embedded in prompts and targets.
//!
//! Numbers are rendered the way Python's `repr` renders floats (shortest
//! round-trip digits, exponent form outside `1e-4 <= |x| < 1e16`), chord
//! labels are single-quoted, and every list uses `", "` separators:
//!
//! ```text
//! Tempo: [[105.26315789473684, 0.4619219529856875]]
//! Chords: [[0.0, 1.5, 'C:maj'], [1.5, 3.7, 'F:maj']]
//! Downbeats: [[0.25, 3.0], [0.81, 4.0]]
//! Key: [[9.83237405307591e-05, ...]]
//! ```

use crate::chords::{ChordLabel, ChordSegment};
use crate::downbeats::Downbeat;
use crate::error::{FeatureError, Result};
use crate::key::KeyDistribution;
use crate::tempo::{TempoCandidate, TempoEstimate};

/// Everything the feature block carries, in serialisable form.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub tempo: Vec<TempoCandidate>,
    pub chords: Vec<ChordSegment>,
    pub downbeats: Vec<Downbeat>,
    pub key: Vec<f64>,
}

impl FeatureSet {
    pub fn new(tempo: &TempoEstimate, chords: &[ChordSegment], downbeats: &[Downbeat], key: &KeyDistribution) -> Self {
        Self {
            tempo: tempo.candidates.clone(),
            chords: chords.to_vec(),
            downbeats: downbeats.to_vec(),
            key: key.probabilities.clone(),
        }
    }

    pub fn key_distribution(&self) -> KeyDistribution {
        KeyDistribution { probabilities: self.key.clone() }
    }
}

/// Python `repr` of a float.
pub fn py_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    // `{:e}` yields the shortest round-trip digits, e.g. "1.0526315789473684e2"
    let sci = format!("{:e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let sign = if x < 0.0 { "-" } else { "" };
    let body = if (-4..16).contains(&exp) {
        let point = exp + 1;
        if point <= 0 {
            format!("0.{}{}", "0".repeat((-point) as usize), digits)
        } else if point as usize >= digits.len() {
            format!("{}{}.0", digits, "0".repeat(point as usize - digits.len()))
        } else {
            let (a, b) = digits.split_at(point as usize);
            format!("{a}.{b}")
        }
    } else {
        let (first, rest) = digits.split_at(1);
        let mant = if rest.is_empty() { first.to_string() } else { format!("{first}.{rest}") };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{esign}{:02}", exp.abs())
    };
    format!("{sign}{body}")
}

fn list<I: IntoIterator<Item = String>>(items: I) -> String {
    format!("[{}]", items.into_iter().collect::<Vec<_>>().join(", "))
}

pub fn render_tempo(tempo: &[TempoCandidate]) -> String {
    list(tempo.iter().map(|c| list([py_float(c.bpm), py_float(c.strength)])))
}

pub fn render_chords(chords: &[ChordSegment]) -> String {
    list(chords.iter().map(|c| list([py_float(c.start), py_float(c.end), format!("'{}'", c.label)])))
}

pub fn render_downbeats(beats: &[Downbeat]) -> String {
    list(beats.iter().map(|b| list([py_float(b.time), py_float(b.beat_position as f64)])))
}

pub fn render_key(key: &[f64]) -> String {
    list([list(key.iter().map(|&p| py_float(p)))])
}

/// Four-line feature block.
pub fn textualize(features: &FeatureSet) -> String {
    format!(
        "Tempo: {}\nChords: {}\nDownbeats: {}\nKey: {}",
        render_tempo(&features.tempo),
        render_chords(&features.chords),
        render_downbeats(&features.downbeats),
        render_key(&features.key)
    )
}

#[derive(Clone, Debug, PartialEq)]
enum Value {
    Num(f64),
    Str(String),
    List(Vec<Value>),
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> FeatureError {
        FeatureError::Parse { pos: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos] == b' ' {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        if self.src.get(self.pos) == Some(&b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`", b as char)))
        }
    }

    fn value(&mut self) -> Result<Value> {
        self.skip_ws();
        match self.src.get(self.pos) {
            Some(b'[') => {
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_ws();
                if self.src.get(self.pos) == Some(&b']') {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.value()?);
                    self.skip_ws();
                    match self.src.get(self.pos) {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        _ => return Err(self.err("expected `,` or `]`")),
                    }
                }
            }
            Some(b'\'') => {
                self.pos += 1;
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos] != b'\'' {
                    self.pos += 1;
                }
                let s = std::str::from_utf8(&self.src[start..self.pos]).map_err(|_| self.err("invalid utf-8"))?;
                self.expect(b'\'')?;
                Ok(Value::Str(s.to_string()))
            }
            Some(_) => {
                let start = self.pos;
                while self.pos < self.src.len() && !matches!(self.src[self.pos], b',' | b']' | b' ') {
                    self.pos += 1;
                }
                let tok = std::str::from_utf8(&self.src[start..self.pos]).map_err(|_| self.err("invalid utf-8"))?;
                tok.parse::<f64>()
                    .map(Value::Num)
                    .map_err(|_| FeatureError::Parse { pos: start, msg: format!("bad number `{tok}`") })
            }
            None => Err(self.err("unexpected end of input")),
        }
    }
}

fn parse_value(s: &str) -> Result<Value> {
    let mut p = Parser { src: s.as_bytes(), pos: 0 };
    let v = p.value()?;
    p.skip_ws();
    if p.pos != s.len() {
        return Err(p.err("trailing characters"));
    }
    Ok(v)
}

fn rows(v: Value, what: &str) -> Result<Vec<Vec<Value>>> {
    let bad = || FeatureError::Parse { pos: 0, msg: format!("{what}: expected a list of lists") };
    match v {
        Value::List(items) => items
            .into_iter()
            .map(|i| match i {
                Value::List(r) => Ok(r),
                _ => Err(bad()),
            })
            .collect(),
        _ => Err(bad()),
    }
}

fn num(v: &Value, what: &str) -> Result<f64> {
    match v {
        Value::Num(x) => Ok(*x),
        _ => Err(FeatureError::Parse { pos: 0, msg: format!("{what}: expected a number") }),
    }
}

fn arity(r: &[Value], n: usize, what: &str) -> Result<()> {
    if r.len() != n {
        return Err(FeatureError::Parse { pos: 0, msg: format!("{what}: expected {n} fields, got {}", r.len()) });
    }
    Ok(())
}

/// Inverse of [`textualize`].
pub fn parse_features(text: &str) -> Result<FeatureSet> {
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        let line = line.trim_start_matches(['-', ' ']);
        if line.is_empty() {
            continue;
        }
        let (name, rest) = line
            .split_once(": ")
            .ok_or_else(|| FeatureError::Parse { pos: 0, msg: format!("line without `name: value`: {line}") })?;
        fields.insert(name.to_string(), parse_value(rest)?);
    }
    let mut take = |name: &str| {
        fields.remove(name).ok_or_else(|| FeatureError::Parse { pos: 0, msg: format!("missing `{name}` line") })
    };

    let tempo = rows(take("Tempo")?, "Tempo")?
        .iter()
        .map(|r| {
            arity(r, 2, "Tempo")?;
            Ok(TempoCandidate { bpm: num(&r[0], "Tempo")?, strength: num(&r[1], "Tempo")? })
        })
        .collect::<Result<Vec<_>>>()?;
    let chords = rows(take("Chords")?, "Chords")?
        .iter()
        .map(|r| {
            arity(r, 3, "Chords")?;
            let label = match &r[2] {
                Value::Str(s) => s.parse::<ChordLabel>().map_err(|msg| FeatureError::Parse { pos: 0, msg })?,
                _ => return Err(FeatureError::Parse { pos: 0, msg: "Chords: expected a quoted label".into() }),
            };
            Ok(ChordSegment { start: num(&r[0], "Chords")?, end: num(&r[1], "Chords")?, label })
        })
        .collect::<Result<Vec<_>>>()?;
    let downbeats = rows(take("Downbeats")?, "Downbeats")?
        .iter()
        .map(|r| {
            arity(r, 2, "Downbeats")?;
            let pos = num(&r[1], "Downbeats")?;
            if pos < 1.0 || pos.fract() != 0.0 {
                return Err(FeatureError::Parse { pos: 0, msg: format!("Downbeats: bad beat position {pos}") });
            }
            Ok(Downbeat { time: num(&r[0], "Downbeats")?, beat_position: pos as u32 })
        })
        .collect::<Result<Vec<_>>>()?;
    let key_rows = rows(take("Key")?, "Key")?;
    let key = match key_rows.as_slice() {
        [] => Vec::new(),
        [row] => row.iter().map(|v| num(v, "Key")).collect::<Result<Vec<_>>>()?,
        _ => return Err(FeatureError::Parse { pos: 0, msg: "Key: expected a single row".into() }),
    };
    Ok(FeatureSet { tempo, chords, downbeats, key })
}
