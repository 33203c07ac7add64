use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CategoryVocabulary, SceneLayout, SceneObject};
use crate::error::{Error, Result};
use crate::geometry::{FloorPlan, Vec2};

/// On-disk / wire form of one object (meters, vertical = y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub category: String,
    pub position: [f64; 3],
    pub theta: f64,
    pub dimension: [f64; 3],
}

/// On-disk / wire form of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub floor: Vec<[f64; 2]>,
    pub objects: Vec<ObjectRecord>,
}

pub fn scene_to_json(scene: &SceneLayout, vocab: &CategoryVocabulary) -> Result<SceneRecord> {
    Ok(SceneRecord {
        floor: scene.floor.vertices().iter().map(|&v| v.into()).collect(),
        objects: scene
            .objects
            .iter()
            .map(|o| {
                Ok(ObjectRecord {
                    category: vocab.name(o.category)?.to_owned(),
                    position: o.position,
                    theta: o.theta,
                    dimension: o.dimension,
                })
            })
            .collect::<Result<_>>()?,
    })
}

pub fn scene_from_json(record: &SceneRecord, vocab: &CategoryVocabulary) -> Result<SceneLayout> {
    let floor =
        FloorPlan::new_any_orientation(record.floor.iter().map(|&p| Vec2::from(p)).collect())?;
    let objects = record
        .objects
        .iter()
        .map(|o| {
            Ok(SceneObject {
                category: vocab.index(&o.category)?,
                position: o.position,
                theta: o.theta,
                dimension: o.dimension,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SceneLayout { floor, objects })
}

/// Reads a JSON-lines dataset; blank lines are skipped.
pub fn read_dataset(path: &Path, vocab: &CategoryVocabulary) -> Result<Vec<SceneLayout>> {
    let file = fs::File::open(path)?;
    let mut scenes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let record: SceneRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        scenes.push(scene_from_json(&record, vocab).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(scenes)
}

pub fn write_dataset(
    path: &Path,
    scenes: &[SceneLayout],
    vocab: &CategoryVocabulary,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in scenes {
        serde_json::to_writer(&mut w, &scene_to_json(s, vocab)?)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vocabulary(path: &Path) -> Result<CategoryVocabulary> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_vocabulary(path: &Path, vocab: &CategoryVocabulary) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(vocab)?)?;
    Ok(())
}
