use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gctx_numerics::ops::resize_bilinear;
use gctx_numerics::Tensor;

use super::nseg::NsegTensor;
use crate::error::{Error, Result};
use crate::model::parse_kv;
use crate::objectives::LabelMask;

/// One image with its label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub id: String,
    /// `[C,H,W]`, intensities in [0,1].
    pub image: Tensor<f32>,
    /// `[H,W]`.
    pub mask: LabelMask,
    /// Row and column spacing.
    pub spacing: [f64; 2],
}

impl SegSample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: LabelMask, spacing: [f64; 2]) -> Result<Self> {
        let id = id.into();
        let s = image.shape();
        if s.len() != 3 || mask.shape() != [s[1], s[2]] {
            return Err(Error::Data(format!(
                "sample '{id}': image {s:?} and mask {:?} have different extents",
                mask.shape()
            )));
        }
        Ok(Self { id, image, mask, spacing })
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.mask.height(), self.mask.width())
    }

    /// Bilinear image / nearest mask resize to `oh×ow`; spacing is rescaled
    /// so physical extents are preserved.
    pub fn resized(&self, oh: usize, ow: usize) -> SegSample {
        let (h, w) = self.size();
        if (h, w) == (oh, ow) {
            return self.clone();
        }
        let c = self.channels();
        let image = Tensor::new(&[c, oh, ow], resize_bilinear(self.image.data(), c, h, w, oh, ow)).expect("sized");
        let mask = resize_nearest(&self.mask, oh, ow);
        let spacing = [self.spacing[0] * h as f64 / oh as f64, self.spacing[1] * w as f64 / ow as f64];
        SegSample { id: self.id.clone(), image, mask, spacing }
    }
}

/// Nearest-neighbour resize sampling source index ⌊(o+½)·in/out⌋.
pub fn resize_nearest(mask: &LabelMask, oh: usize, ow: usize) -> LabelMask {
    let (h, w) = (mask.height(), mask.width());
    let src = |o: usize, n_in: usize, n_out: usize| ((2 * o + 1) * n_in / (2 * n_out)).min(n_in - 1);
    LabelMask::from_fn(oh, ow, |y, x| mask.get(src(y, h, oh), src(x, w, ow)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split '{s}' (train, val, test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SegSample>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Side length shared by all samples, if square and uniform.
    pub fn image_size(&self) -> Option<usize> {
        let (h, w) = self.samples.first()?.size();
        (h == w && self.samples.iter().all(|s| s.size() == (h, w))).then_some(h)
    }

    pub fn channels(&self) -> Option<usize> {
        self.samples.first().map(SegSample::channels)
    }

    /// Writes `images/<id>.nseg`, `masks/<id>.nseg` and `manifest.txt`
    /// under `dir`; returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        for sub in ["images", "masks"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let size = self.image_size().ok_or_else(|| Error::Data("dataset samples must share one square size".into()))?;
        let mut manifest = Manifest {
            root: dir.to_path_buf(),
            num_classes: self.num_classes,
            size,
            split: self.split,
            spacing: self.samples.first().map_or([1.0, 1.0], |s| s.spacing),
            entries: Vec::new(),
        };
        for s in &self.samples {
            let image = PathBuf::from("images").join(format!("{}.nseg", s.id));
            let mask = PathBuf::from("masks").join(format!("{}.nseg", s.id));
            NsegTensor::F32(s.image.clone()).write(dir.join(&image))?;
            NsegTensor::U8 { shape: s.mask.shape().to_vec(), data: s.mask.data().to_vec() }.write(dir.join(&mask))?;
            manifest.entries.push(ManifestEntry { id: s.id.clone(), image, mask });
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest directory unless absolute.
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Dataset index: `key = value` header lines (`classes`, `size`, `split`,
/// `spacing`) and one `id image_path mask_path` line per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub num_classes: usize,
    pub size: usize,
    pub split: Split,
    pub spacing: [f64; 2],
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut errors = Vec::new();
        let (mut classes, mut size, mut split, mut spacing) = (None, None, Split::Train, [1.0, 1.0]);
        let mut entries: Vec<ManifestEntry> = Vec::new();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.contains('=') {
                let kv = parse_kv(line)?.remove(0);
                let v = kv.value.as_str();
                seen.push(kv.key.clone());
                let r: std::result::Result<(), String> = match kv.key.as_str() {
                    "classes" => v.parse().map(|x| classes = Some(x)).map_err(|_| format!("bad classes '{v}'")),
                    "size" => v.parse().map(|x| size = Some(x)).map_err(|_| format!("bad size '{v}'")),
                    "split" => v.parse().map(|x| split = x),
                    "spacing" => parse_spacing(v).map(|x| spacing = x),
                    k => Err(format!("unknown key '{k}'")),
                };
                if let Err(m) = r {
                    errors.push(format!("line {}: {m}", i + 1));
                }
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                errors.push(format!("line {}: expected 'id image mask', got '{line}'", i + 1));
                continue;
            }
            if entries.iter().any(|e| e.id == parts[0]) {
                errors.push(format!("line {}: duplicate id '{}'", i + 1, parts[0]));
            }
            entries.push(ManifestEntry { id: parts[0].into(), image: parts[1].into(), mask: parts[2].into() });
        }
        if !seen.iter().any(|k| k == "classes") {
            errors.push("missing 'classes'".into());
        }
        if !seen.iter().any(|k| k == "size") {
            errors.push("missing 'size'".into());
        }
        if classes.is_some_and(|k: usize| !(2..=256).contains(&k)) {
            errors.push("classes must be in 2..=256".into());
        }
        if size == Some(0) {
            errors.push("size must be positive".into());
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors.into_iter().map(|e| format!("manifest: {e}")).collect()));
        }
        Ok(Self {
            root: root.into(),
            num_classes: classes.unwrap(),
            size: size.unwrap(),
            split,
            spacing,
            entries,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "classes = {}", self.num_classes);
        let _ = writeln!(s, "size = {}", self.size);
        let _ = writeln!(s, "split = {}", self.split.as_str());
        let _ = writeln!(s, "spacing = {:?},{:?}", self.spacing[0], self.spacing[1]);
        for e in &self.entries {
            let _ = writeln!(s, "{} {} {}", e.id, e.image.display(), e.mask.display());
        }
        s
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.root.join(p) }
    }
}

fn parse_spacing(v: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<f64> = v.split(',').map(|s| s.trim().parse::<f64>()).collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("bad spacing '{v}'"))?;
    match parts[..] {
        [a, b] if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() => Ok([a, b]),
        _ => Err(format!("spacing must be two positive numbers, got '{v}'")),
    }
}

fn read_entry(m: &Manifest, e: &ManifestEntry) -> Result<SegSample> {
    let open = |rel: &Path| {
        let p = m.resolve(rel);
        if !p.is_file() {
            return Err(Error::MissingFile { id: e.id.clone(), path: p });
        }
        NsegTensor::read(&p)
    };
    let image = open(&e.image)?;
    let mask = open(&e.mask)?;
    let mut image = image.to_f32();
    if image.rank() == 2 {
        let s = image.shape().to_vec();
        image = image.into_reshaped(&[1, s[0], s[1]])?;
    }
    let NsegTensor::U8 { shape, data } = mask else {
        return Err(Error::Data(format!("sample '{}': mask must be stored as 8-bit labels", e.id)));
    };
    if shape.len() != 2 {
        return Err(Error::Data(format!("sample '{}': mask must be [H,W], got {shape:?}", e.id)));
    }
    let mask = LabelMask::new(&shape, data)?;
    mask.validate(m.num_classes).map_err(|err| Error::Data(format!("sample '{}': {err}", e.id)))?;
    let sample = SegSample::new(e.id.clone(), image, mask, m.spacing)?;
    Ok(sample.resized(m.size, m.size))
}

/// Loads every manifest entry, resizing to the declared square size.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let m = Manifest::read(manifest_path)?;
    let samples = m.entries.iter().map(|e| read_entry(&m, e)).collect::<Result<Vec<_>>>()?;
    if let Some(c) = samples.first().map(SegSample::channels) {
        if let Some(s) = samples.iter().find(|s| s.channels() != c) {
            return Err(Error::Data(format!("sample '{}' has {} channels, expected {c}", s.id, s.channels())));
        }
    }
    Ok(Dataset { samples, num_classes: m.num_classes, split: m.split })
}
