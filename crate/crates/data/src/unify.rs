//! Caption unifiers: an offline template composer and a chat-completions client.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use log::{info, warn};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tetrad_music::key::key_name;
use tetrad_music::ChordLabel;

use crate::error::{invalid, DataError, Result};
use crate::record::{Music4wayRecord, UnifierKind};

/// Instruction appended to the caption block when asking for a unified caption.
pub const UNIFY_INSTRUCTION: &str = "Given the above information of video captions, image captions, music captions, and music features, generate a unified description that combines the elements of both the video and the music, taking into account the mood, style, and emotions conveyed by the captions and music features. The description should be cohesive and provide a holistic view of the content, reflecting how the visual and auditory components complement each other. Focus on creating a narrative that integrates the rhythm, harmony, and tonality of the music with the visual elements and storyline of the video.";

/// First line of the user turn when asking for an Any2T triplet.
pub const ANY2T_PREAMBLE: &str =
    "Generate the output for the following input; the style of the input, instruction, and output may vary.";

/// System text for Any2T triplet generation.
pub const ANY2T_SYSTEM: &str = "Help generate input, instruction, and output triplets using the given paired music caption, video caption, image caption, music features, and unified caption. The unified caption includes all three captions as well as music features such as tempo, chords, downbeats, and key.

Guidelines:
1. Input: Should be a sentence that includes two or all three modalities: music (mandatory), video, and/or image. Music must be referred to as <Music>. Image must be referred to as <Image>. Video must be referred to as <Video>.
2. Instruction: Should be a text-based question or directive that requires generating a unified output based on the given inputs. It should guide the model to consider both the audio and the visual aspects, explaining how they interact to create a unified experience.
3. Output: Should be a textual response, potentially composed using the information from the music, video, image captions or the unified caption.

Example:
Input: Consider the music of <Music> and its paired image of <Image> that visually represents a key moment of the music.
Instruction: Provide a description of how the music's rhythm, tempo, and tonal qualities are visually represented in the image, combining insights from both the music and the image captions.
Output: The music is characterized by a slow tempo with a calm, serene melody, primarily featuring piano and soft strings. The image complements this mood, showing a peaceful sunset over a calm ocean. The soft, gentle waves in the image mirror the steady downbeats of the music, while the warm color palette in the image reflects the key of the music, which is in A major, creating a sense of tranquility. Together, they evoke a feeling of peace and reflection.";

/// The caption block shared by both prompts.
pub fn caption_block(record: &Music4wayRecord) -> String {
    let mut s = format!(
        "- Video Caption: {}\n- Image Caption: {}\n- Music Caption: {}\n- Music Features:",
        record.captions.video, record.captions.image, record.captions.music
    );
    for line in record.feature_text.lines() {
        s.push_str("\n------ ");
        s.push_str(line);
    }
    s
}

pub fn unify_prompt(record: &Music4wayRecord) -> String {
    format!("{}\n\n{}", caption_block(record), UNIFY_INSTRUCTION)
}

pub fn any2t_prompt(record: &Music4wayRecord) -> Result<String> {
    Ok(format!("{ANY2T_PREAMBLE}\n\n{}\n- Unified Caption: {}", caption_block(record), record.unified()?))
}

/// Which content blocks a composed caption carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blocks {
    pub video: bool,
    pub image: bool,
    pub features: bool,
}

impl Blocks {
    pub const ALL: Blocks = Blocks { video: true, image: true, features: true };
}

/// Target re-composition for the caption ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetVariant {
    #[default]
    Full,
    /// Without visual captions.
    NoVc,
    /// Without low-level music features.
    NoMf,
}

impl TargetVariant {
    pub const ALL: [TargetVariant; 3] = [TargetVariant::Full, TargetVariant::NoVc, TargetVariant::NoMf];

    pub fn blocks(self) -> Blocks {
        match self {
            TargetVariant::Full => Blocks::ALL,
            TargetVariant::NoVc => Blocks { video: false, image: false, features: true },
            TargetVariant::NoMf => Blocks { video: true, image: true, features: false },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetVariant::Full => "full",
            TargetVariant::NoVc => "no-vc",
            TargetVariant::NoMf => "no-mf",
        }
    }
}

impl std::str::FromStr for TargetVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(TargetVariant::Full),
            "no-vc" | "no_vc" => Ok(TargetVariant::NoVc),
            "no-mf" | "no_mf" => Ok(TargetVariant::NoMf),
            _ => Err(format!("unknown target variant `{s}` (full, no-vc, no-mf)")),
        }
    }
}

const CLOSING: &str = "Picture and sound share one pace, so the motion on screen follows the pulse of the music.";

fn feature_sentences(record: &Music4wayRecord) -> Result<Vec<String>> {
    let f = record.features()?;
    let mut out = Vec::new();
    if let Some(top) = f.tempo.first() {
        out.push(format!("The beat sits at about {} BPM.", top.bpm.round() as i64));
    }
    let mut labels: Vec<ChordLabel> = Vec::new();
    for c in &f.chords {
        if !labels.contains(&c.label) {
            labels.push(c.label);
        }
    }
    if !labels.is_empty() {
        let names: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
        out.push(format!("The detected chords are {}.", join_and(&names)));
    }
    if !f.key.is_empty() {
        out.push(format!("The estimated key is {}.", key_name(f.key_distribution().argmax())));
    }
    let meter = f.downbeats.iter().map(|b| b.beat_position).max().unwrap_or(0);
    match f.downbeats.iter().find(|b| b.beat_position == 1) {
        Some(first) => out.push(format!("Downbeats fall every {meter} beats, the first at {:.2} seconds.", first.time)),
        None => out.push("No steady downbeat grid was found.".to_string()),
    }
    Ok(out)
}

fn join_and(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Deterministic paragraph: visual captions, music caption, feature
/// sentences, closing line.
pub fn compose(record: &Music4wayRecord, blocks: Blocks) -> Result<String> {
    let mut parts: Vec<String> = Vec::new();
    if blocks.video {
        parts.push(record.captions.video.trim().to_string());
    }
    if blocks.image {
        parts.push(record.captions.image.trim().to_string());
    }
    parts.push(record.captions.music.trim().to_string());
    if blocks.features {
        parts.extend(feature_sentences(record)?);
    }
    if blocks.video || blocks.image {
        parts.push(CLOSING.to_string());
    }
    Ok(parts.join(" "))
}

/// Input / instruction / output triplet for Any2T.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Any2tTriplet {
    pub input: String,
    pub instruction: String,
    pub output: String,
}

impl Any2tTriplet {
    /// Reads `Input:` / `Instruction:` / `Output:` sections from a reply.
    pub fn parse(reply: &str) -> Result<Self> {
        let mut sections: [Option<String>; 3] = [None, None, None];
        let mut current: Option<usize> = None;
        for line in reply.lines() {
            let t = line.trim_start();
            let hit = [("Input:", 0), ("Instruction:", 1), ("Output:", 2)]
                .iter()
                .find_map(|(p, i)| t.strip_prefix(p).map(|rest| (*i, rest.trim().to_string())));
            match hit {
                Some((i, rest)) => {
                    sections[i] = Some(rest);
                    current = Some(i);
                }
                None => {
                    if let Some(i) = current {
                        let s = sections[i].as_mut().expect("opened");
                        if !line.trim().is_empty() {
                            if !s.is_empty() {
                                s.push(' ');
                            }
                            s.push_str(line.trim());
                        }
                    }
                }
            }
        }
        match sections {
            [Some(input), Some(instruction), Some(output)] => Ok(Self { input, instruction, output }),
            _ => Err(invalid("any2t reply", "expected Input:, Instruction: and Output: sections")),
        }
    }
}

pub trait Unifier {
    fn kind(&self) -> UnifierKind;
    fn unify(&self, record: &Music4wayRecord) -> Result<String>;
    /// `seed` only matters to implementations that draw variants.
    fn any2t(&self, record: &Music4wayRecord, seed: u64) -> Result<Any2tTriplet>;
}

/// Offline, pure function of the record.
#[derive(Clone, Copy, Debug, Default)]
pub struct TemplateUnifier;

const INPUTS_IMAGE: [&str; 4] = [
    "Listen to <Music> while looking at <Image>.",
    "<Image> is a still taken from the clip that <Music> accompanies.",
    "Here is a frame, <Image>, and the track that plays under it, <Music>.",
    "The soundtrack <Music> goes with the picture <Image>.",
];
const INPUTS_VIDEO: [&str; 4] = [
    "Watch <Video> and listen to <Music>.",
    "<Video> is scored with the track <Music>.",
    "The soundtrack <Music> accompanies the clip <Video>.",
    "Here is a short clip, <Video>, set to <Music>.",
];
const INPUTS_BOTH: [&str; 4] = [
    "<Music> plays over <Video>, and <Image> is one still from it.",
    "Take the still <Image>, the clip <Video> and its soundtrack <Music>.",
    "Watch <Video>, then compare the still <Image> with the soundtrack <Music>.",
    "The track <Music> goes with <Image>, a frame of <Video>.",
];
const QUESTIONS: [&str; 5] = [
    "How do the rhythm and harmony of the music relate to what is shown?",
    "Describe how the tempo and key of the track fit the motion and colours on screen.",
    "What mood do the sound and the visuals create together, and why?",
    "Explain how the visual elements reflect the pace, chords and key of the music.",
    "Describe the music in detail and say how the visuals match it.",
];

fn variant_rng(record: &Music4wayRecord, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(record.id.as_bytes());
    let d = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&d);
    ChaCha8Rng::from_seed(s)
}

impl Unifier for TemplateUnifier {
    fn kind(&self) -> UnifierKind {
        UnifierKind::Template
    }

    fn unify(&self, record: &Music4wayRecord) -> Result<String> {
        compose(record, Blocks::ALL)
    }

    fn any2t(&self, record: &Music4wayRecord, seed: u64) -> Result<Any2tTriplet> {
        let mut rng = variant_rng(record, seed);
        let (inputs, blocks) = match [0usize, 1, 2].choose(&mut rng).expect("non-empty") {
            0 => (&INPUTS_IMAGE, Blocks { video: false, image: true, features: true }),
            1 => (&INPUTS_VIDEO, Blocks { video: true, image: false, features: true }),
            _ => (&INPUTS_BOTH, Blocks::ALL),
        };
        Ok(Any2tTriplet {
            input: inputs.choose(&mut rng).expect("non-empty").to_string(),
            instruction: QUESTIONS.choose(&mut rng).expect("non-empty").to_string(),
            output: compose(record, blocks)?,
        })
    }
}

pub const API_KEY_VAR: &str = "UNIFIER_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Extra attempts after the first.
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub temperature: f64,
    /// JSON lines of every request and response, when set.
    pub audit_log: Option<PathBuf>,
}

impl RemoteConfig {
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            model: "gpt-4o-mini".to_string(),
            retries: 3,
            backoff_ms: 500,
            timeout_ms: 60_000,
            temperature: 0.0,
            audit_log: None,
        }
    }
}

/// Chat-completions client. Failures surface as [`DataError::Transport`];
/// there is no fallback to the template path.
pub struct RemoteUnifier {
    config: RemoteConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl RemoteUnifier {
    pub fn new(config: RemoteConfig, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, api_key, agent }
    }

    /// Key from `UNIFIER_API_KEY`.
    pub fn from_env(config: RemoteConfig) -> Result<Self> {
        match std::env::var(API_KEY_VAR) {
            Ok(k) if !k.trim().is_empty() => Ok(Self::new(config, k)),
            _ => Err(DataError::Config(format!("remote unifier needs {API_KEY_VAR} in the environment"))),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn audit(&self, entry: &Value) {
        let Some(path) = &self.config.audit_log else { return };
        let res = OpenOptions::new().create(true).append(true).open(path).and_then(|mut f| writeln!(f, "{entry}"));
        if let Err(e) = res {
            warn!("audit log {}: {e}", path.display());
        }
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, (bool, String)> {
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        self.audit(&json!({"request": body, "status": status, "response": text}));
        if !(200..300).contains(&status) {
            // client errors other than rate limiting will not improve on retry
            let retry = status == 429 || status >= 500;
            return Err((retry, format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| (false, format!("bad JSON reply: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or((false, "reply has no choices[0].message.content".to_string()))
    }

    /// Sends `(role, content)` messages and returns the first choice.
    pub fn chat(&self, messages: &[(&str, &str)]) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages.iter().map(|(r, c)| json!({"role": r, "content": c})).collect::<Vec<_>>(),
        });
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(s) => return Ok(s),
                Err((retry, message)) => {
                    self.audit(&json!({"request": body, "error": message}));
                    if !retry || attempts > self.config.retries {
                        return Err(DataError::Transport { attempts, message });
                    }
                    info!("unifier attempt {attempts} failed: {message}; retrying");
                    thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempts - 1).min(6)));
                }
            }
        }
    }
}

impl Unifier for RemoteUnifier {
    fn kind(&self) -> UnifierKind {
        UnifierKind::Remote
    }

    fn unify(&self, record: &Music4wayRecord) -> Result<String> {
        let reply = self.chat(&[("user", &unify_prompt(record))])?;
        let reply = reply.trim();
        if reply.is_empty() {
            return Err(invalid("unifier reply", format!("{}: empty", record.id)));
        }
        Ok(reply.to_string())
    }

    fn any2t(&self, record: &Music4wayRecord, _seed: u64) -> Result<Any2tTriplet> {
        let reply = self.chat(&[("system", ANY2T_SYSTEM), ("user", &any2t_prompt(record)?)])?;
        Any2tTriplet::parse(&reply)
    }
}
