use std::io::Write;
use std::path::Path;

use anyhow::Context;
use image::RgbImage;
use longtail_core::anno::{parse_dataset, Dataset, ImageRecord};
use serde::Serialize;

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Writes pretty JSON to `path`, or to stdout when `path` is `None`.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = to_json(value);
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn write_png(path: &Path, img: &RgbImage) -> anyhow::Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    write_atomic(path, buf.get_ref())
}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let text = read_text(path)?;
    parse_dataset(&text).with_context(|| format!("loading {}", path.display()))
}

pub fn load_image(dir: &Path, rec: &ImageRecord) -> anyhow::Result<RgbImage> {
    let path = dir.join(&rec.file_name);
    let img = image::open(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(img.to_rgb8())
}
