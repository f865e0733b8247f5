use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use lcm::data::{synthetic_blobs, synthetic_shapes};
use lcm::io::{load_image, save_image, DatasetManifest, ManifestEntry};

use super::{create_dir, has_png_extension, stem, write};
use crate::config::{invalid, ECHO_FILE};
use crate::{PrepareArgs, SynthArgs};

#[derive(Serialize)]
struct PrepareEcho<'a> {
    command: &'static str,
    src: &'a Path,
    manifest: &'a Path,
    shape: [usize; 3],
}

fn parse_shape(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| invalid(format!("shape `{s}` must be C,H,W")))?;
    match parts.as_slice() {
        &[c, h, w] if matches!(c, 1 | 3) && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(invalid(format!("shape `{s}` must be C,H,W with C in {{1, 3}}"))),
    }
}

pub fn prepare_data(a: &PrepareArgs) -> Result<bool> {
    let shape = parse_shape(&a.shape)?;
    let root = a
        .src
        .canonicalize()
        .with_context(|| format!("reading {}", a.src.display()))?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(&root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut entries = Vec::new();
    let mut skipped = 0usize;
    for path in &names {
        let decoded = if has_png_extension(path) {
            load_image::<f32>(path, shape[0], shape[1], shape[2]).map(|_| ())
        } else {
            Err(lcm::LcmError::Decode {
                path: path.clone(),
                detail: "not a .png file".into(),
            })
        };
        match decoded {
            Ok(()) => entries.push(ManifestEntry {
                id: stem(path),
                path: PathBuf::from(path.file_name().expect("listed files have names")),
                shape,
            }),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    if entries.is_empty() {
        return Err(invalid(format!("no decodable PNG in {}", root.display())));
    }
    let manifest = DatasetManifest::new(root.clone(), entries)?;
    if let Some(parent) = a.manifest.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    manifest.save(&a.manifest)?;
    let echo = PrepareEcho {
        command: "prepare-data",
        src: &root,
        manifest: &a.manifest,
        shape,
    };
    let mut echo_path = a.manifest.clone().into_os_string();
    echo_path.push(".");
    echo_path.push(ECHO_FILE);
    write(Path::new(&echo_path), toml::to_string(&echo)?)?;
    println!(
        "wrote {} with {} entries ({} files skipped)",
        a.manifest.display(),
        manifest.entries.len(),
        skipped
    );
    Ok(true)
}

#[derive(Serialize)]
struct SynthEcho {
    command: &'static str,
    count: usize,
    size: usize,
    seed: u64,
    blobs: usize,
}

pub fn synth_data(a: &SynthArgs) -> Result<bool> {
    let ds = if a.blobs == 0 {
        synthetic_shapes::<f32>(a.count, a.size, a.seed)?
    } else {
        synthetic_blobs::<f32>(a.count, a.size, a.blobs, a.seed)?
    };
    create_dir(&a.dir)?;
    let mut entries = Vec::with_capacity(ds.len());
    for (id, img) in ds.ids.iter().zip(&ds.images) {
        let file = PathBuf::from(format!("{id}.png"));
        save_image(img, &a.dir.join(&file))?;
        entries.push(ManifestEntry {
            id: id.clone(),
            path: file,
            shape: [3, a.size, a.size],
        });
    }
    let manifest = DatasetManifest::new(".", entries)?;
    manifest.save(&a.dir.join("manifest.json"))?;
    let echo = SynthEcho {
        command: "synth-data",
        count: a.count,
        size: a.size,
        seed: a.seed,
        blobs: a.blobs,
    };
    write(&a.dir.join(ECHO_FILE), toml::to_string(&echo)?)?;
    println!("wrote {} images and manifest.json to {}", ds.len(), a.dir.display());
    Ok(true)
}
