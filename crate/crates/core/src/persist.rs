//! Run configuration files, presets, manifests, checkpoints and CSV logs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::{Adam, AdamState, GaussianHead, Mlp};
use crate::policy::{ArchConfig, BundleSpecs, PolicyBundle, Role};
use crate::ppo::PpoOptimizer;
use crate::rewards::TERM_NAMES;
use crate::train::{IterationLog, Phase, TrainConfig, Trainer, TrainerState};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LDADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Configuration

/// Name of the offending key in a deserializer message, if it names one.
fn offending_key(msg: &str) -> Option<String> {
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(start) = msg.find(marker) {
            let rest = &msg[start + marker.len()..];
            return rest.find('`').map(|end| rest[..end].to_string());
        }
    }
    None
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parse a TOML run configuration. A top-level `preset = "desk" | "paper"`
/// supplies every value the file leaves out; without it the file must be
/// complete. Unknown keys are rejected by name.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("config", e.message()))?;
    let table = match table.remove("preset") {
        Some(toml::Value::String(name)) => {
            let mut base = toml::Table::try_from(TrainConfig::preset(&name)?)
                .map_err(|e| Error::config("preset", e.to_string()))?;
            merge(&mut base, table);
            base
        }
        Some(_) => return Err(Error::config("preset", "must be a string")),
        None => table,
    };
    let cfg: TrainConfig = table.try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().to_string();
        Error::config(offending_key(&msg).unwrap_or_else(|| "config".into()), msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<(TrainConfig, String)> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::config("config", "file is not UTF-8"))?;
    Ok((parse_config(&text)?, text))
}

/// Complete TOML rendering of a configuration; parses back to the same value.
pub fn config_to_toml(cfg: &TrainConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::config("config", e.to_string()))
}

// ---------------------------------------------------------------------------
// Hyper-parameter tables

fn range(r: [f64; 2]) -> String {
    format!("[{}, {}]", r[0], r[1])
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

/// `1 x 10^-3` for exact powers of ten below 0.01, plain decimals otherwise.
fn scientific(x: f64) -> String {
    let e = x.log10().round();
    if x > 0.0 && x < 0.01 && 10f64.powi(e as i32) == x {
        format!("1 x 10^{}", e as i32)
    } else {
        x.to_string()
    }
}

/// Domain-randomization ranges and training hyper-parameters as rendered in
/// the run manifest, one `term | value | unit` line per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperTables {
    pub randomization: Vec<String>,
    pub ppo: Vec<String>,
    pub supervised: Vec<String>,
}

impl HyperTables {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        let r = &cfg.randomization;
        let row = |term: &str, value: String, unit: &str| format!("{term} | {value} | {unit}");
        let randomization = vec![
            row("Link mass", format!("{} x nominal value", range(r.link_mass_factor)), "Kg"),
            row("Payload mass", range(r.payload_mass), "Kg"),
            row("CoM of base", range(r.base_com_cm), "cm"),
            row("CoM of leg", range(r.leg_com_cm), "cm"),
            row("Friction", range(r.friction), "-"),
            row("Joint Kp factor", range(r.kp_factor), "N*rad"),
            row("Joint Kd factor", range(r.kd_factor), "N*rad/s"),
            row("Motor strength factor", range(r.motor_strength), ""),
            row("Action delay", range(r.action_delay_ms), "ms"),
            row("Load mass", range(r.load_mass), "Kg"),
            row("Load size", range(r.load_size), "m"),
            row("Load fric. coef.", range(r.load_friction), ""),
            row("Load init. vel.", range(r.load_initial_velocity), "m/s"),
        ];
        let p = &cfg.ppo;
        let s = &cfg.supervised;
        let pair = |term: &str, value: String| format!("{term} | {value}");
        let ppo = vec![
            pair("Batch size", format!("{} x {}", cfg.envs, p.steps_per_env)),
            pair("Mini-batch size", format!("{} x {}", cfg.envs, p.minibatch_steps)),
            pair("Number of epochs", p.epochs.to_string()),
            pair("Clip range", p.clip.to_string()),
            pair("Entropy coefficient", p.entropy_coef.to_string()),
            pair("Discount factor", p.gamma.to_string()),
            pair("GAE discount factor", p.lambda.to_string()),
            pair("Desired KL-divergence", p.desired_kl.to_string()),
            pair("Learning rate", "adaptive".into()),
            pair("Teacher-student iteration", cfg.teacher_iterations.to_string()),
            pair("Student reinforce iteration", cfg.reinforce_iterations.to_string()),
        ];
        let supervised = vec![
            pair("Batch size", format!("{} x {}", cfg.envs, p.steps_per_env)),
            pair("Mini-batch size", format!("{} x {}", cfg.envs, s.minibatch_steps)),
            pair("Number of epochs", s.epochs.to_string()),
            pair("Learning rate", scientific(s.learning_rate)),
            pair("Loss weight of L_est", list(&s.load_loss_weights)),
        ];
        HyperTables {
            randomization,
            ppo,
            supervised,
        }
    }

    /// Plain-text rendering with one section header per table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (title, rows) in [
            ("Domain randomization", &self.randomization),
            ("PPO training", &self.ppo),
            ("Proprioceptive encoder and load estimator training", &self.supervised),
        ] {
            out.push_str(&format!("# {title}\n"));
            for r in rows.iter() {
                out.push_str(r);
                out.push('\n');
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRef {
    pub iteration: usize,
    /// Relative to the run directory.
    pub file: String,
    pub sha256: String,
}

/// Everything needed to identify and re-run a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub code_version: String,
    pub role: Role,
    pub seed: u64,
    pub phase: Phase,
    pub iteration: usize,
    /// Unix seconds.
    pub started_at: u64,
    pub updated_at: u64,
    /// Hash of the effective configuration (file plus overrides).
    pub config_sha256: String,
    /// The configuration exactly as loaded.
    pub config: String,
    #[serde(default)]
    pub overrides: Overrides,
    pub checkpoints: Vec<CheckpointRef>,
    pub tables: HyperTables,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Command-line values that replace entries of the configuration file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub role: Option<Role>,
    pub seed: Option<u64>,
    pub envs: Option<usize>,
    /// Teacher iterations; the reinforce phase gets a fifth of them.
    pub iterations: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(role) = self.role {
            cfg.role = role;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(envs) = self.envs {
            cfg.envs = envs;
        }
        if let Some(n) = self.iterations {
            cfg.teacher_iterations = n;
            cfg.reinforce_iterations = (n / 5).max(1);
        }
        cfg.validate()
    }
}

/// Hash identifying an effective configuration.
pub fn config_hash(cfg: &TrainConfig) -> Result<String> {
    Ok(sha256_hex(config_to_toml(cfg)?.as_bytes()))
}

impl RunManifest {
    /// Manifest for a run of `cfg`, the result of applying `overrides` to
    /// the file `config_text`.
    pub fn new(cfg: &TrainConfig, config_text: &str, overrides: Overrides) -> Result<Self> {
        let now = unix_now();
        Ok(RunManifest {
            code_version: CODE_VERSION.into(),
            role: cfg.role,
            seed: cfg.seed,
            phase: Phase::Teacher,
            iteration: 0,
            started_at: now,
            updated_at: now,
            config_sha256: config_hash(cfg)?,
            config: config_text.into(),
            overrides,
            checkpoints: Vec::new(),
            tables: HyperTables::from_config(cfg),
        })
    }

    /// The configuration the run was started with, overrides applied.
    pub fn config(&self) -> Result<TrainConfig> {
        let mut cfg = parse_config(&self.config)?;
        self.overrides.apply(&mut cfg)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("manifest", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("manifest", e.message()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), self.to_toml()?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = String::from_utf8(read(&path)?).map_err(|_| Error::config("manifest", "file is not UTF-8"))?;
        Self::from_toml(&text)
    }

    /// Every referenced checkpoint exists and matches its recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for c in &self.checkpoints {
            let bytes = read(&dir.join(&c.file))?;
            if sha256_hex(&bytes) != c.sha256 {
                return Err(Error::Integrity(format!("{} does not match the manifest hash", c.file)));
            }
        }
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REWARD_LOG_FILE: &str = "reward_terms.csv";

pub fn checkpoint_file_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.bin")
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub role: Role,
    pub phase: Phase,
    pub iteration: usize,
    pub seed: u64,
    pub config_sha256: String,
    pub arch: ArchConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: TrainerState,
}

enum Block<'a> {
    F64(&'a [f64]),
    U64(Vec<u64>),
}

fn put_block(out: &mut Vec<u8>, name: &str, block: Block) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    match block {
        Block::F64(v) => {
            out.push(0);
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Block::U64(v) => {
            out.push(1);
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

fn put_adam<'a>(blocks: &mut Vec<(String, Block<'a>)>, name: &str, adam: &'a Adam) {
    let s = &adam.state;
    blocks.push((format!("{name}.m"), Block::F64(&s.m)));
    blocks.push((format!("{name}.v"), Block::F64(&s.v)));
    blocks.push((format!("{name}.t"), Block::U64(vec![s.t])));
}

/// Serialize: magic, format version, TOML header, named little-endian
/// blocks, CRC32 of everything before it.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = toml::to_string(&ck.header).map_err(|e| Error::config("checkpoint header", e.to_string()))?;
    let st = &ck.state;
    let b = &st.bundle;
    let lr = [st.ppo_opt.lr];
    let mut blocks: Vec<(String, Block)> = vec![
        ("net.privileged".into(), Block::F64(&b.privileged.params)),
        ("net.proprio".into(), Block::F64(&b.proprio.params)),
        ("net.actor".into(), Block::F64(&b.actor.params)),
        ("net.critic".into(), Block::F64(&b.critic.params)),
        ("net.log_std".into(), Block::F64(&b.head.log_std)),
    ];
    if let Some(e) = &b.estimator {
        blocks.push(("net.estimator".into(), Block::F64(&e.params)));
    }
    blocks.push(("opt.ppo.lr".into(), Block::F64(&lr)));
    put_adam(&mut blocks, "opt.ppo.actor", &st.ppo_opt.actor);
    put_adam(&mut blocks, "opt.ppo.critic", &st.ppo_opt.critic);
    put_adam(&mut blocks, "opt.ppo.head", &st.ppo_opt.head);
    put_adam(&mut blocks, "opt.ppo.encoder", &st.ppo_opt.encoder);
    put_adam(&mut blocks, "opt.proprio", &st.proprio_opt);
    if let Some(a) = &st.estimator_opt {
        put_adam(&mut blocks, "opt.estimator", a);
    }
    blocks.push((
        "curriculum.levels".into(),
        Block::U64(st.levels.iter().map(|&l| l as u64).collect()),
    ));

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, block) in blocks {
        put_block(&mut out, &name, block);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Integrity(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Owned {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

/// Raw header and named blocks, integrity-checked.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckpoint {
    pub header: CheckpointHeader,
    blocks: Vec<(String, Owned)>,
}

impl RawCheckpoint {
    /// Block names with their lengths, in file order.
    pub fn block_sizes(&self) -> Vec<(String, usize)> {
        self.blocks
            .iter()
            .map(|(n, b)| {
                let len = match b {
                    Owned::F64(v) => v.len(),
                    Owned::U64(v) => v.len(),
                };
                (n.clone(), len)
            })
            .collect()
    }

    fn f64s(&mut self, name: &str) -> Result<Vec<f64>> {
        match self.remove(name)? {
            Owned::F64(v) => Ok(v),
            Owned::U64(_) => Err(Error::Integrity(format!("block {name} has the wrong type"))),
        }
    }

    fn u64s(&mut self, name: &str) -> Result<Vec<u64>> {
        match self.remove(name)? {
            Owned::U64(v) => Ok(v),
            Owned::F64(_) => Err(Error::Integrity(format!("block {name} has the wrong type"))),
        }
    }

    fn has(&self, name: &str) -> bool {
        self.blocks.iter().any(|(n, _)| n == name)
    }

    fn remove(&mut self, name: &str) -> Result<Owned> {
        let i = self
            .blocks
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Integrity(format!("missing block {name}")))?;
        Ok(self.blocks.remove(i).1)
    }

    fn adam(&mut self, name: &str, len: usize) -> Result<Adam> {
        let m = self.f64s(&format!("{name}.m"))?;
        let v = self.f64s(&format!("{name}.v"))?;
        let t = self.u64s(&format!("{name}.t"))?;
        if m.len() != len || v.len() != len || t.len() != 1 {
            return Err(Error::Integrity(format!("optimizer {name} does not match its parameters")));
        }
        let mut a = Adam::new(len);
        a.state = AdamState { m, v, t: t[0] };
        Ok(a)
    }
}

pub fn decode_raw_checkpoint(bytes: &[u8]) -> Result<RawCheckpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 4 {
        return Err(Error::Integrity("file too short".into()));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Integrity("not a checkpoint file (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("checksum mismatch (file truncated or corrupted)".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Integrity(format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.u32()? as usize;
    let htext = std::str::from_utf8(r.take(hlen)?).map_err(|_| Error::Integrity("header is not UTF-8".into()))?;
    let header: CheckpointHeader =
        toml::from_str(htext).map_err(|e| Error::Integrity(format!("bad header: {}", e.message())))?;
    let count = r.u32()?;
    let mut blocks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::Integrity("block name is not UTF-8".into()))?
            .to_string();
        let kind = r.take(1)?[0];
        let len = r.u64()? as usize;
        if len > (body.len() - r.pos) / 8 {
            return Err(Error::Integrity(format!("block {name} overruns the file")));
        }
        let raw = r.take(len * 8)?;
        let block = match kind {
            0 => Owned::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => Owned::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
            k => return Err(Error::Integrity(format!("block {name} has unknown kind {k}"))),
        };
        blocks.push((name, block));
    }
    if r.pos != body.len() {
        return Err(Error::Integrity("trailing bytes after the last block".into()));
    }
    Ok(RawCheckpoint { header, blocks })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut raw = decode_raw_checkpoint(bytes)?;
    let header = raw.header.clone();
    let flags = header.role.flags();
    let specs = BundleSpecs::new(&header.arch, &flags);
    let net = |raw: &mut RawCheckpoint, name: &str, spec| -> Result<Mlp> {
        Mlp::from_params(spec, raw.f64s(name)?).map_err(|e| Error::Integrity(format!("{name}: {e}")))
    };
    let estimator = match (specs.estimator.clone(), raw.has("net.estimator")) {
        (Some(spec), true) => Some(net(&mut raw, "net.estimator", spec)?),
        (None, false) => None,
        _ => return Err(Error::RoleMismatch(format!("estimator presence does not match role {}", header.role))),
    };
    let bundle = PolicyBundle {
        role: header.role,
        flags,
        arch: header.arch.clone(),
        privileged: net(&mut raw, "net.privileged", specs.privileged.clone())?,
        proprio: net(&mut raw, "net.proprio", specs.proprio.clone())?,
        estimator,
        actor: net(&mut raw, "net.actor", specs.actor.clone())?,
        critic: net(&mut raw, "net.critic", specs.critic.clone())?,
        head: GaussianHead {
            log_std: raw.f64s("net.log_std")?,
        },
    };
    bundle.check_shapes().map_err(|e| Error::Integrity(e.to_string()))?;
    let lr = raw.f64s("opt.ppo.lr")?;
    if lr.len() != 1 {
        return Err(Error::Integrity("opt.ppo.lr must hold one value".into()));
    }
    let encoder_len = match header.phase {
        Phase::Teacher => bundle.privileged.params.len(),
        Phase::Reinforce => bundle.proprio.params.len(),
    };
    let ppo_opt = PpoOptimizer {
        lr: lr[0],
        actor: raw.adam("opt.ppo.actor", bundle.actor.params.len())?,
        critic: raw.adam("opt.ppo.critic", bundle.critic.params.len())?,
        head: raw.adam("opt.ppo.head", bundle.head.log_std.len())?,
        encoder: raw.adam("opt.ppo.encoder", encoder_len)?,
    };
    let proprio_opt = raw.adam("opt.proprio", bundle.proprio.params.len())?;
    let estimator_opt = match &bundle.estimator {
        Some(e) => Some(raw.adam("opt.estimator", e.params.len())?),
        None => None,
    };
    let levels = raw.u64s("curriculum.levels")?.into_iter().map(|l| l as usize).collect();
    if let Some((name, _)) = raw.blocks.first() {
        return Err(Error::Integrity(format!("unexpected block {name}")));
    }
    Ok(Checkpoint {
        header,
        state: TrainerState {
            bundle,
            ppo_opt,
            proprio_opt,
            estimator_opt,
            iteration: raw.header.iteration,
            levels,
        },
    })
}

/// Write the checkpoint and return its SHA-256.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<String> {
    let bytes = encode_checkpoint(ck)?;
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read(path)?)
}

/// Summary printed by `inspect`.
pub fn describe_checkpoint(bytes: &[u8]) -> Result<String> {
    let raw = decode_raw_checkpoint(bytes)?;
    let h = &raw.header;
    let f = h.role.flags();
    let specs = BundleSpecs::new(&h.arch, &f);
    let shape = |s: &crate::nn::MlpSpec| {
        let mut dims = vec![s.input.to_string()];
        dims.extend(s.hidden.iter().map(|d| d.to_string()));
        dims.push(s.output.to_string());
        dims.join(" -> ")
    };
    let mut out = String::new();
    out.push_str(&format!("role: {}\n", h.role));
    out.push_str(&format!(
        "flags: privileged_load={} actor_load={:?} estimator={} load_rewards={}\n",
        f.privileged_load, f.actor_load, f.estimator, f.load_rewards
    ));
    out.push_str(&format!("phase: {}\niteration: {}\nseed: {}\n", h.phase.name(), h.iteration, h.seed));
    out.push_str(&format!("config sha256: {}\n", h.config_sha256));
    out.push_str(&format!("privileged encoder: {}\n", shape(&specs.privileged)));
    out.push_str(&format!("proprioceptive encoder: {}\n", shape(&specs.proprio)));
    if let Some(e) = &specs.estimator {
        out.push_str(&format!("load estimator: {}\n", shape(e)));
    }
    out.push_str(&format!("actor: {}\n", shape(&specs.actor)));
    out.push_str(&format!("critic: {}\n", shape(&specs.critic)));
    out.push_str(&format!("file sha256: {}\n", sha256_hex(bytes)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV logs

/// Appends training-log rows and per-term reward rows as iterations finish.
pub struct TrainLogWriter {
    log: csv::Writer<fs::File>,
    rewards: csv::Writer<fs::File>,
}

fn open_csv(path: &Path, append: bool) -> Result<csv::Writer<fs::File>> {
    let exists = append && path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(!exists).from_writer(file))
}

impl TrainLogWriter {
    /// Fresh logs in `dir`, or appended ones when resuming.
    pub fn open(dir: &Path, append: bool) -> Result<Self> {
        let log = open_csv(&dir.join(TRAIN_LOG_FILE), append)?;
        let reward_path = dir.join(REWARD_LOG_FILE);
        let fresh = !(append && reward_path.exists());
        let mut rewards = open_csv(&reward_path, append)?;
        if fresh {
            let mut head = vec!["iteration", "phase"];
            head.extend(TERM_NAMES);
            rewards.write_record(&head)?;
        }
        Ok(TrainLogWriter { log, rewards })
    }

    pub fn write(&mut self, row: &IterationLog) -> Result<()> {
        self.log.serialize(row)?;
        let mut rec = vec![row.iteration.to_string(), row.phase.name().to_string()];
        rec.extend(row.reward_terms.iter().map(|v| v.to_string()));
        self.rewards.write_record(&rec)?;
        self.log.flush().map_err(|e| Error::io(TRAIN_LOG_FILE, e))?;
        self.rewards.flush().map_err(|e| Error::io(REWARD_LOG_FILE, e))
    }
}

/// Drop log rows at or beyond `iteration` (used before resuming).
pub fn truncate_csv_rows(path: &Path, iteration: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = String::from_utf8(read(path)?).map_err(|_| Error::config("log", "not UTF-8"))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|v| v.parse::<usize>().ok())
                .is_some_and(|it| it < iteration);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Training runs

/// Train into `dir`: manifest, checkpoints every `checkpoint_every`
/// iterations and at the end, and the CSV logs. With `resume`, continue from
/// the newest checkpoint of the run already in `dir`; the effective
/// configuration must hash to the one recorded there.
pub fn train_run(
    cfg: TrainConfig,
    config_text: &str,
    overrides: Overrides,
    dir: &Path,
    resume: bool,
    progress: &mut dyn FnMut(&IterationLog),
) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let existing = dir.join(MANIFEST_FILE).exists();
    if existing && !resume {
        return Err(Error::config(
            "out",
            format!("{} already holds a run; resume it or pick another directory", dir.display()),
        ));
    }
    let hash = config_hash(&cfg)?;
    let (mut manifest, mut trainer) = match (resume && existing).then(|| RunManifest::load(dir)).transpose()? {
        Some(m) => {
            if m.config_sha256 != hash {
                return Err(Error::config(
                    "resume",
                    format!("configuration hash {hash} differs from the run's {}", m.config_sha256),
                ));
            }
            m.verify(dir)?;
            let trainer = match m.checkpoints.last() {
                Some(c) => {
                    let ck = load_checkpoint(&dir.join(&c.file))?;
                    if ck.header.config_sha256 != hash {
                        return Err(Error::config("resume", format!("{} was written by another configuration", c.file)));
                    }
                    Trainer::from_state(cfg, ck.state)?
                }
                None => Trainer::new(cfg)?,
            };
            (m, trainer)
        }
        None => (RunManifest::new(&cfg, config_text, overrides)?, Trainer::new(cfg)?),
    };
    for file in [TRAIN_LOG_FILE, REWARD_LOG_FILE] {
        truncate_csv_rows(&dir.join(file), trainer.iteration)?;
    }
    manifest.iteration = trainer.iteration;
    manifest.phase = trainer.phase();
    manifest.save(dir)?;
    let mut logs = TrainLogWriter::open(dir, trainer.iteration > 0)?;
    let every = trainer.config.checkpoint_every;
    trainer.run(&mut |t, row| {
        logs.write(row)?;
        progress(row);
        if t.iteration % every == 0 || t.is_finished() {
            let file = checkpoint_file_name(t.iteration);
            let ck = Checkpoint {
                header: CheckpointHeader {
                    role: t.config.role,
                    phase: t.phase(),
                    iteration: t.iteration,
                    seed: t.config.seed,
                    config_sha256: hash.clone(),
                    arch: t.config.arch.clone(),
                },
                state: t.state(),
            };
            let sha256 = save_checkpoint(&dir.join(&file), &ck)?;
            manifest.checkpoints.retain(|c| c.iteration != t.iteration);
            manifest.checkpoints.push(CheckpointRef {
                iteration: t.iteration,
                file,
                sha256,
            });
            manifest.iteration = t.iteration;
            manifest.phase = t.phase();
            manifest.updated_at = unix_now();
            manifest.save(dir)?;
        }
        Ok(())
    })?;
    Ok(manifest)
}

/// Output root: `--out`, else `$LOADADAPT_OUT`, else `runs/`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("LOADADAPT_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips_through_toml() {
        for name in ["desk", "paper"] {
            let cfg = TrainConfig::preset(name).unwrap();
            let text = config_to_toml(&cfg).unwrap();
            assert_eq!(parse_config(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("preset = \"desk\"\nseed = 3\n[ppo]\nclip_range = 0.3\n").unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "clip_range"),
            other => panic!("{other}"),
        }
        let cfg = parse_config("preset = \"desk\"\nseed = 3\n[ppo]\nclip = 0.3\n").unwrap();
        assert_eq!((cfg.seed, cfg.ppo.clip), (3, 0.3));
    }

    #[test]
    fn scientific_rendering() {
        assert_eq!(scientific(1e-3), "1 x 10^-3");
        assert_eq!(scientific(0.2), "0.2");
    }
}
