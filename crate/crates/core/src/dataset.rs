//! Sample identity, on-disk dataset indexing and the gallery/probe protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::image::{BinaryImage, SilhouetteFrame};
use crate::rng;

pub type SubjectId = u32;

/// Number of Normal runs per subject that form the gallery set.
pub const GALLERY_RUNS: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariate {
    Normal,
    Bag,
    Coat,
}

impl Covariate {
    pub const ALL: [Covariate; 3] = [Covariate::Normal, Covariate::Bag, Covariate::Coat];

    pub fn code(self) -> &'static str {
        match self {
            Covariate::Normal => "nm",
            Covariate::Bag => "bg",
            Covariate::Coat => "cl",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "nm" => Some(Covariate::Normal),
            "bg" => Some(Covariate::Bag),
            "cl" => Some(Covariate::Coat),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn label(self) -> u32 {
        self as u32
    }

    pub fn from_label(l: u32) -> Option<Self> {
        match l {
            0 => Some(Gender::Male),
            1 => Some(Gender::Female),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

impl FromStr for Gender {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" | "m" | "M" => Ok(Gender::Male),
            "female" | "f" | "F" => Ok(Gender::Female),
            _ => Err(GaitError::invalid(format!("unknown gender '{s}'"))),
        }
    }
}

/// Camera view in degrees, a multiple of 18 in `[0, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct ViewAngle(u16);

impl ViewAngle {
    pub const SAGITTAL: ViewAngle = ViewAngle(90);

    pub fn new(degrees: u16) -> Result<Self> {
        if degrees <= 180 && degrees.is_multiple_of(18) {
            Ok(Self(degrees))
        } else {
            Err(GaitError::invalid(format!(
                "view angle {degrees} is not a multiple of 18 in [0, 180]"
            )))
        }
    }

    pub fn degrees(self) -> u16 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = ViewAngle> {
        (0..=10).map(|i| ViewAngle(i * 18))
    }

    /// The nine angles that are neither frontal nor rear.
    pub fn non_coronal() -> impl Iterator<Item = ViewAngle> {
        (1..=9).map(|i| ViewAngle(i * 18))
    }

    pub fn is_coronal(self) -> bool {
        self.0 == 0 || self.0 == 180
    }
}

impl TryFrom<u16> for ViewAngle {
    type Error = GaitError;

    fn try_from(v: u16) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ViewAngle> for u16 {
    fn from(v: ViewAngle) -> u16 {
        v.0
    }
}

impl fmt::Display for ViewAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03}", self.0)
    }
}

/// Identity of one recorded walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub subject: SubjectId,
    pub covariate: Covariate,
    pub run: u8,
    pub view: ViewAngle,
}

impl SampleKey {
    pub fn new(subject: SubjectId, covariate: Covariate, run: u8, view: ViewAngle) -> Self {
        Self {
            subject,
            covariate,
            run,
            view,
        }
    }

    /// Path of the sequence directory relative to the dataset root.
    pub fn relative_dir(&self) -> PathBuf {
        PathBuf::from(format!("{:03}", self.subject))
            .join(format!("{}-{:02}", self.covariate.code(), self.run))
            .join(self.view.to_string())
    }

    pub fn is_gallery_run(&self) -> bool {
        self.covariate == Covariate::Normal && self.run <= GALLERY_RUNS
    }
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:03}-{}-{:02}-{}",
            self.subject, self.covariate, self.run, self.view
        )
    }
}

impl FromStr for SampleKey {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GaitError::invalid(format!("malformed sample key '{s}'"));
        let parts: Vec<&str> = s.split('-').collect();
        let [sid, cov, run, view] = parts[..] else {
            return Err(bad());
        };
        Ok(SampleKey {
            subject: sid.parse().map_err(|_| bad())?,
            covariate: Covariate::from_code(cov).ok_or_else(bad)?,
            run: run.parse().map_err(|_| bad())?,
            view: ViewAngle::new(view.parse().map_err(|_| bad())?)?,
        })
    }
}

/// Silhouettes as captured, before size normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    pub key: SampleKey,
    pub frames: Vec<BinaryImage>,
}

/// Normalized silhouettes of one walk in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSequence {
    pub key: SampleKey,
    pub frames: Vec<SilhouetteFrame>,
}

impl GaitSequence {
    pub fn new(key: SampleKey, frames: Vec<SilhouetteFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(GaitError::InsufficientData(format!(
                "sequence {key} has no frames"
            )));
        }
        Ok(Self { key, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub key: SampleKey,
    /// Sequence directory relative to the dataset root.
    pub path: PathBuf,
    pub frames: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub samples: Vec<SampleEntry>,
    pub subjects: BTreeSet<SubjectId>,
}

impl DatasetIndex {
    /// Builds an index, sorted by key, rejecting duplicate keys.
    pub fn from_entries(mut samples: Vec<SampleEntry>) -> Result<Self> {
        samples.sort_by_key(|s| s.key);
        if let Some(w) = samples.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(GaitError::invalid(format!("duplicate sample key {}", w[0].key)));
        }
        let subjects = samples.iter().map(|s| s.key.subject).collect();
        Ok(Self { samples, subjects })
    }

    pub fn from_keys(keys: impl IntoIterator<Item = (SampleKey, usize)>) -> Result<Self> {
        Self::from_entries(
            keys.into_iter()
                .map(|(key, frames)| SampleEntry {
                    key,
                    path: key.relative_dir(),
                    frames,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = SampleKey> + '_ {
        self.samples.iter().map(|s| s.key)
    }

    pub fn get(&self, key: &SampleKey) -> Option<&SampleEntry> {
        self.samples
            .binary_search_by_key(key, |s| s.key)
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: DatasetIndex = serde_json::from_str(s)?;
        Self::from_entries(raw.samples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)
            .map_err(|e| GaitError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path)
            .map_err(|e| GaitError::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&s)
    }
}

/// Problems met while indexing that did not abort the scan.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub warnings: Vec<String>,
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| GaitError::io(format!("listing {}", dir.display()), e))? {
        let entry = entry.map_err(|e| GaitError::io(format!("listing {}", dir.display()), e))?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> &str {
    p.file_name().and_then(|n| n.to_str()).unwrap_or("")
}

fn png_header_ok(path: &Path) -> bool {
    image::ImageReader::open(path)
        .ok()
        .and_then(|r| r.with_guessed_format().ok())
        .is_some_and(|r| r.into_dimensions().is_ok())
}

fn parse_run_dir(name: &str) -> Option<(Covariate, u8)> {
    let (cov, run) = name.split_once('-')?;
    if run.len() != 2 {
        return None;
    }
    Some((Covariate::from_code(cov)?, run.parse().ok()?))
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_dir_sorted(dir)?
        .into_iter()
        .filter(|p| {
            let n = file_name(p);
            n.len() == 8 && n.ends_with(".png") && n[..4].bytes().all(|b| b.is_ascii_digit())
        })
        .collect())
}

/// Scans a dataset tree laid out as `<sid>/<cov>-<run>/<angle>/<frame>.png`.
///
/// Entries that do not follow the layout, and frames whose PNG header cannot
/// be read, are listed in the report rather than indexed.
pub fn load_dataset(root: &Path) -> Result<(DatasetIndex, LoadReport)> {
    if !root.is_dir() {
        return Err(GaitError::MissingRoot(root.to_path_buf()));
    }
    let mut report = LoadReport::default();
    let mut entries = Vec::new();
    for subject_dir in read_dir_sorted(root)? {
        if !subject_dir.is_dir() {
            continue;
        }
        let name = file_name(&subject_dir);
        let subject = match (name.len(), name.parse::<SubjectId>()) {
            (3, Ok(s)) => s,
            _ => {
                report.warnings.push(format!("{}: not a subject directory", subject_dir.display()));
                continue;
            }
        };
        for run_dir in read_dir_sorted(&subject_dir)? {
            let Some((covariate, run)) = run_dir.is_dir().then(|| parse_run_dir(file_name(&run_dir))).flatten() else {
                report.warnings.push(format!("{}: not a <cov>-<run> directory", run_dir.display()));
                continue;
            };
            for view_dir in read_dir_sorted(&run_dir)? {
                let name = file_name(&view_dir);
                let view = match (view_dir.is_dir(), name.len(), name.parse::<u16>().ok().map(ViewAngle::new)) {
                    (true, 3, Some(Ok(v))) => v,
                    _ => {
                        report.warnings.push(format!("{}: not a view directory", view_dir.display()));
                        continue;
                    }
                };
                let key = SampleKey::new(subject, covariate, run, view);
                let files = frame_files(&view_dir)?;
                let unreadable: Vec<_> = files
                    .iter()
                    .filter(|f| !png_header_ok(f))
                    .collect();
                for f in &unreadable {
                    report.warnings.push(format!("{}: unreadable frame", f.display()));
                }
                if files.is_empty() || !unreadable.is_empty() {
                    if files.is_empty() {
                        report.warnings.push(format!("{}: no frames", view_dir.display()));
                    }
                    continue;
                }
                entries.push(SampleEntry {
                    key,
                    path: key.relative_dir(),
                    frames: files.len(),
                });
            }
        }
    }
    Ok((DatasetIndex::from_entries(entries)?, report))
}

/// Reads every frame of one indexed sequence.
pub fn load_sequence(root: &Path, entry: &SampleEntry) -> Result<RawSequence> {
    let frames = frame_files(&root.join(&entry.path))?
        .iter()
        .map(|p| BinaryImage::load_png(p))
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(GaitError::InsufficientData(format!("sequence {} has no frames", entry.key)));
    }
    Ok(RawSequence { key: entry.key, frames })
}

/// Writes a raw sequence under `root` following the dataset layout.
pub fn save_sequence(root: &Path, seq: &RawSequence) -> Result<()> {
    let dir = root.join(seq.key.relative_dir());
    fs::create_dir_all(&dir).map_err(|e| GaitError::io(format!("creating {}", dir.display()), e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        f.save_png(&dir.join(format!("{i:04}.png")))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimTruth {
    Genuine,
    Type1,
    Type2,
}

impl ClaimTruth {
    pub fn is_impostor(self) -> bool {
        self != ClaimTruth::Genuine
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClaimTruth::Genuine => "genuine",
            ClaimTruth::Type1 => "type1",
            ClaimTruth::Type2 => "type2",
        }
    }
}

impl FromStr for ClaimTruth {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" => Ok(ClaimTruth::Genuine),
            "type1" => Ok(ClaimTruth::Type1),
            "type2" => Ok(ClaimTruth::Type2),
            _ => Err(GaitError::invalid(format!("unknown claim truth '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClaimSpec {
    pub probe: SampleKey,
    pub claimed: SubjectId,
    pub truth: ClaimTruth,
}

/// How impostor claims are generated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimProtocol {
    /// Each authorized id is forged once by an outsider per covariate;
    /// authorized probes of the second Normal set swap ids by derangement.
    #[default]
    Forged,
    /// Every outsider probe claims every authorized id; every authorized
    /// probe claims every other authorized id.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub n_authorized: usize,
    /// Caps the number of outsiders drawn from the remaining subjects.
    pub n_outsiders: Option<usize>,
    pub protocol: ClaimProtocol,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryProbeSplit {
    pub gallery: Vec<SampleKey>,
    pub probes: Vec<SampleKey>,
    pub authorized: BTreeSet<SubjectId>,
    pub outsiders: BTreeSet<SubjectId>,
    pub claims: Vec<ClaimSpec>,
}

impl GalleryProbeSplit {
    /// Distinct (outsider, claimed id) pairs among type-1 claims.
    pub fn forged_attempts(&self) -> usize {
        let by_subject: BTreeSet<(SubjectId, SubjectId)> = self
            .claims
            .iter()
            .filter(|c| c.truth == ClaimTruth::Type1)
            .map(|c| (c.probe.subject, c.claimed))
            .collect();
        by_subject.len()
    }

    pub fn count(&self, truth: ClaimTruth) -> usize {
        self.claims.iter().filter(|c| c.truth == truth).count()
    }
}

/// Splits with the forged-attempt protocol and every non-authorized subject
/// as an outsider.
pub fn split_gallery_probe(index: &DatasetIndex, n_authorized: usize, seed: u64) -> Result<GalleryProbeSplit> {
    split_with(
        index,
        &SplitOptions {
            n_authorized,
            n_outsiders: None,
            protocol: ClaimProtocol::Forged,
            seed,
        },
    )
}

/// Draws a uniformly random permutation without fixed points.
pub fn derangement<T: Clone>(items: &[T], rng: &mut rng::GaitRng) -> Vec<T> {
    let n = items.len();
    if n < 2 {
        return items.to_vec();
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm.into_iter().map(|p| items[p].clone()).collect();
        }
    }
}

pub fn split_with(index: &DatasetIndex, opts: &SplitOptions) -> Result<GalleryProbeSplit> {
    let mut by_subject: BTreeMap<SubjectId, Vec<SampleKey>> = BTreeMap::new();
    for key in index.keys() {
        by_subject.entry(key.subject).or_default().push(key);
    }
    let eligible: Vec<SubjectId> = by_subject
        .iter()
        .filter(|(_, keys)| keys.iter().filter(|k| k.is_gallery_run()).count() >= GALLERY_RUNS as usize)
        .map(|(&s, _)| s)
        .collect();
    if opts.n_authorized == 0 || opts.n_authorized > eligible.len() {
        return Err(GaitError::InsufficientData(format!(
            "{} authorized subjects requested but only {} have {} Normal gallery runs",
            opts.n_authorized,
            eligible.len(),
            GALLERY_RUNS
        )));
    }

    let mut rng = rng::stream(opts.seed, &[0x5911]);
    let mut pool = eligible.clone();
    pool.shuffle(&mut rng);
    let authorized: BTreeSet<SubjectId> = pool[..opts.n_authorized].iter().copied().collect();
    let mut rest: Vec<SubjectId> = by_subject.keys().copied().filter(|s| !authorized.contains(s)).collect();
    rest.shuffle(&mut rng);
    if let Some(cap) = opts.n_outsiders {
        rest.truncate(cap);
    }
    let outsiders: BTreeSet<SubjectId> = rest.into_iter().collect();

    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for (subject, keys) in &by_subject {
        let is_auth = authorized.contains(subject);
        if !is_auth && !outsiders.contains(subject) {
            continue;
        }
        for &k in keys {
            if k.is_gallery_run() {
                if is_auth {
                    gallery.push(k);
                }
            } else {
                probes.push(k);
            }
        }
    }

    let auth_ids: Vec<SubjectId> = authorized.iter().copied().collect();
    let mut claims: Vec<ClaimSpec> = probes
        .iter()
        .filter(|p| authorized.contains(&p.subject))
        .map(|&probe| ClaimSpec {
            probe,
            claimed: probe.subject,
            truth: ClaimTruth::Genuine,
        })
        .collect();

    match opts.protocol {
        ClaimProtocol::Forged => forged_claims(&auth_ids, &outsiders, &probes, &mut rng, &mut claims),
        ClaimProtocol::Exhaustive => {
            for &probe in &probes {
                let truth = if authorized.contains(&probe.subject) {
                    ClaimTruth::Type2
                } else {
                    ClaimTruth::Type1
                };
                for &claimed in auth_ids.iter().filter(|&&id| id != probe.subject) {
                    claims.push(ClaimSpec { probe, claimed, truth });
                }
            }
        }
    }

    Ok(GalleryProbeSplit {
        gallery,
        probes,
        authorized,
        outsiders,
        claims,
    })
}

fn forged_claims(
    auth_ids: &[SubjectId],
    outsiders: &BTreeSet<SubjectId>,
    probes: &[SampleKey],
    rng: &mut rng::GaitRng,
    claims: &mut Vec<ClaimSpec>,
) {
    let outsider_list: Vec<SubjectId> = outsiders.iter().copied().collect();
    if !outsider_list.is_empty() {
        let mut ids = auth_ids.to_vec();
        ids.shuffle(rng);
        let mut uses = vec![0usize; outsider_list.len()];
        for (i, &claimed) in ids.iter().enumerate() {
            let slot = i % outsider_list.len();
            let outsider = outsider_list[slot];
            let attempt = uses[slot];
            uses[slot] += 1;
            for cov in Covariate::ALL {
                let own: Vec<SampleKey> = probes
                    .iter()
                    .filter(|p| p.subject == outsider && p.covariate == cov)
                    .copied()
                    .collect();
                if own.is_empty() {
                    continue;
                }
                claims.push(ClaimSpec {
                    probe: own[attempt % own.len()],
                    claimed,
                    truth: ClaimTruth::Type1,
                });
            }
        }
    }

    if auth_ids.len() >= 2 {
        for cov in Covariate::ALL {
            let swapped = derangement(auth_ids, rng);
            let map: BTreeMap<SubjectId, SubjectId> = auth_ids.iter().copied().zip(swapped).collect();
            for probe in probes.iter().filter(|p| p.covariate == cov) {
                if let Some(&claimed) = map.get(&probe.subject) {
                    claims.push(ClaimSpec {
                        probe: *probe,
                        claimed,
                        truth: ClaimTruth::Type2,
                    });
                }
            }
        }
    }
}
