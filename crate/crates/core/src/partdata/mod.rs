//! Part-annotated sketch records, validation, record I/O and the turn-level
//! augmentation used to build supervised examples.

mod augment;
mod labels;
mod record;

pub use augment::{
    assemble_partial_gt, permute_augment, sample_permutations, turn_examples, AugmentError, OrderError, SftDrawnPart,
    SftRecord, TurnExample, DEFAULT_MAX_PERMUTATIONS,
};
pub use labels::{parse_path_key, path_key, LabelParseError, PartDecomposition, PartLabel, PartSpec, PathAssignment};
pub use record::{
    caption_word_count, deserialize_record, read_records, record_to_json, serialize_record, validate_annotation,
    validate_assignment, validate_parts, AnnotatedSketch, DecodeError, Violation, ViolationCode, MAX_CAPTION_WORDS,
    MAX_PARTS, MIN_PARTS,
};

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::stroke::{CanvasConfig, CubicStroke, Sketch};

    /// `k` parts with two strokes each, paths grouped by part.
    pub fn n_part_record(k: usize) -> AnnotatedSketch {
        let mut paths = Vec::new();
        let mut labels = Vec::new();
        for p in 0..k {
            for s in 0..2 {
                let y = 40 + (p * 2 + s) as i32 * 37;
                paths.push(CubicStroke::from_coords([100, y, 120, y - 20, 140, y - 20, 160 + s as i32, y]));
                labels.push(PartLabel::from_index(p));
            }
        }
        AnnotatedSketch {
            id: format!("fixture-{k}"),
            sketch: Sketch::new(paths, CanvasConfig::default()),
            caption: "a small test creature".into(),
            parts: PartDecomposition::from_descriptions((0..k).map(|p| format!("part number {}", p + 1))),
            assignment: PathAssignment::from_labels(labels),
        }
    }

    pub fn three_part_record() -> AnnotatedSketch {
        n_part_record(3)
    }
}
