//! Class-map / section-mask fusion.
//!
//! Step one assigns every section the class most of its pixels carry in the
//! class map and repaints the section with it. Step two unions 4-adjacent
//! sections that ended up with the same class. Together they repair sparse
//! labeling errors while keeping instance boundaries from the section mask.

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::scene::{
    validate_pair, BBox, ClassId, ClassMap, FusedScene, SceneError, SectionMask, SectionRecord,
    NUM_CLASSES,
};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("assignment has no class for section {0}")]
    MissingSection(u32),
}

pub type Tally = [u32; NUM_CLASSES];

/// Class chosen for each section, with the votes behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionAssignment {
    classes: Vec<ClassId>,
    tallies: Vec<Tally>,
}

impl SectionAssignment {
    /// An assignment without vote records (all tallies zero).
    pub fn from_classes(classes: Vec<ClassId>) -> SectionAssignment {
        let tallies = vec![[0; NUM_CLASSES]; classes.len()];
        SectionAssignment { classes, tallies }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_of(&self, section: u32) -> Option<ClassId> {
        self.classes.get(section as usize).copied()
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn tallies(&self) -> &[Tally] {
        &self.tallies
    }

    fn covers(&self, mask: &SectionMask) -> Result<(), FusionError> {
        if self.classes.len() < mask.n_sections() as usize {
            return Err(FusionError::MissingSection(self.classes.len() as u32));
        }
        Ok(())
    }
}

/// Most frequent class in a tally; ties go to the lowest class id.
pub fn winning_class(tally: &Tally) -> ClassId {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if tally[c] > tally[best] {
            best = c;
        }
    }
    ClassId::ALL[best]
}

const ROWS_PER_CHUNK: usize = 64;

/// Step one: per-section majority vote over the class map.
pub fn vote_section_classes(
    class_map: &ClassMap,
    section_mask: &SectionMask,
) -> Result<SectionAssignment, FusionError> {
    vote_section_classes_with(Exec::default(), class_map, section_mask)
}

pub fn vote_section_classes_with(
    exec: Exec,
    class_map: &ClassMap,
    section_mask: &SectionMask,
) -> Result<SectionAssignment, FusionError> {
    validate_pair(class_map, section_mask)?;
    let n = section_mask.n_sections() as usize;
    let w = class_map.width() as usize;
    let h = class_map.height() as usize;
    let labels = class_map.as_raw();
    let ids = section_mask.as_raw();

    let tally_rows = |y0: usize, y1: usize| {
        let mut t = vec![[0u32; NUM_CLASSES]; n];
        for i in y0 * w..y1 * w {
            t[usize::from(ids[i])][usize::from(labels[i])] += 1;
        }
        t
    };

    let tallies = if exec.is_parallel() && h > ROWS_PER_CHUNK {
        let chunks = h.div_ceil(ROWS_PER_CHUNK);
        let partials = exec.map_range(chunks, |c| {
            tally_rows(c * ROWS_PER_CHUNK, ((c + 1) * ROWS_PER_CHUNK).min(h))
        });
        let mut total = vec![[0u32; NUM_CLASSES]; n];
        for part in partials {
            for (acc, p) in total.iter_mut().zip(part) {
                for c in 0..NUM_CLASSES {
                    acc[c] += p[c];
                }
            }
        }
        total
    } else {
        tally_rows(0, h)
    };

    let classes = tallies.iter().map(winning_class).collect();
    Ok(SectionAssignment { classes, tallies })
}

/// Paints every pixel with its section's assigned class.
pub fn relabel(
    section_mask: &SectionMask,
    assignment: &SectionAssignment,
) -> Result<ClassMap, FusionError> {
    assignment.covers(section_mask)?;
    let lut: Vec<u8> = assignment.classes.iter().map(|c| c.get()).collect();
    let raw = section_mask
        .as_raw()
        .iter()
        .map(|&s| lut[usize::from(s)])
        .collect();
    Ok(ClassMap::from_raw(section_mask.width(), section_mask.height(), raw)?)
}

/// Output of [`merge_sections`]: the merged mask plus, for every input
/// section, the id it was merged into.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeResult {
    pub mask: SectionMask,
    pub merged_into: Vec<u32>,
    pub classes: Vec<ClassId>,
}

/// Step two: union 4-adjacent sections with equal assigned class, then
/// renumber in row-major first-occurrence order.
pub fn merge_sections(
    section_mask: &SectionMask,
    assignment: &SectionAssignment,
) -> Result<MergeResult, FusionError> {
    assignment.covers(section_mask)?;
    let n = section_mask.n_sections() as usize;
    let w = section_mask.width() as usize;
    let ids = section_mask.as_raw();
    let class = |s: u16| assignment.classes[usize::from(s)];

    let mut uf = UnionFind::<u32>::new(n);
    for (i, &s) in ids.iter().enumerate() {
        if i % w + 1 < w {
            let t = ids[i + 1];
            if t != s && class(s) == class(t) {
                uf.union(u32::from(s), u32::from(t));
            }
        }
        if let Some(&t) = ids.get(i + w) {
            if t != s && class(s) == class(t) {
                uf.union(u32::from(s), u32::from(t));
            }
        }
    }
    let roots = uf.into_labeling();

    const UNSET: u32 = u32::MAX;
    let mut new_id_of_root = vec![UNSET; n];
    let mut next = 0u32;
    let mut classes = Vec::new();
    let mut out = Vec::with_capacity(ids.len());
    for &s in ids {
        let root = roots[usize::from(s)] as usize;
        if new_id_of_root[root] == UNSET {
            new_id_of_root[root] = next;
            classes.push(class(s));
            next += 1;
        }
        out.push(new_id_of_root[root] as u16);
    }
    let merged_into = (0..n)
        .map(|s| new_id_of_root[roots[s] as usize])
        .collect();
    Ok(MergeResult {
        mask: SectionMask::from_parts_unchecked(
            section_mask.width(),
            section_mask.height(),
            out,
            next,
        ),
        merged_into,
        classes,
    })
}

/// Per-section vote record written by the `fuse --report` command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionVote {
    pub section: u32,
    pub class: ClassId,
    pub tally: Tally,
    pub merged_into: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionReport {
    pub width: u32,
    pub height: u32,
    pub input_sections: u32,
    pub output_sections: u32,
    pub sections: Vec<SectionVote>,
}

pub fn fuse(class_map: &ClassMap, section_mask: &SectionMask) -> Result<FusedScene, FusionError> {
    fuse_with_report(class_map, section_mask).map(|(scene, _)| scene)
}

pub fn fuse_with_report(
    class_map: &ClassMap,
    section_mask: &SectionMask,
) -> Result<(FusedScene, FusionReport), FusionError> {
    fuse_impl(Exec::default(), class_map, section_mask)
}

fn fuse_impl(
    exec: Exec,
    class_map: &ClassMap,
    section_mask: &SectionMask,
) -> Result<(FusedScene, FusionReport), FusionError> {
    let assignment = vote_section_classes_with(exec, class_map, section_mask)?;
    let fused_map = relabel(section_mask, &assignment)?;
    let merged = merge_sections(section_mask, &assignment)?;
    let table = section_table(&merged.mask, &merged.classes);

    let report = FusionReport {
        width: class_map.width(),
        height: class_map.height(),
        input_sections: section_mask.n_sections(),
        output_sections: merged.mask.n_sections(),
        sections: (0..assignment.len())
            .map(|s| SectionVote {
                section: s as u32,
                class: assignment.classes[s],
                tally: assignment.tallies[s],
                merged_into: merged.merged_into[s],
            })
            .collect(),
    };
    let scene = FusedScene::from_parts_unchecked(fused_map, merged.mask, table);
    Ok((scene, report))
}

fn section_table(mask: &SectionMask, classes: &[ClassId]) -> Vec<SectionRecord> {
    let w = mask.width() as usize;
    let mut counts = vec![0u64; classes.len()];
    let mut boxes: Vec<Option<BBox>> = vec![None; classes.len()];
    for (i, &s) in mask.as_raw().iter().enumerate() {
        let s = usize::from(s);
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        counts[s] += 1;
        let b = boxes[s].get_or_insert(BBox { x0: x, y0: y, x1: x, y1: y });
        b.x0 = b.x0.min(x);
        b.x1 = b.x1.max(x);
        b.y1 = b.y1.max(y);
    }
    classes
        .iter()
        .enumerate()
        .map(|(s, &class)| SectionRecord {
            id: s as u32,
            class,
            pixel_count: counts[s],
            bbox: boxes[s].expect("every renumbered section has a pixel"),
        })
        .collect()
}

/// Fuses many frames; frames run in parallel under [`Exec::Parallel`].
pub fn fuse_batch(
    exec: Exec,
    frames: &[(&ClassMap, &SectionMask)],
) -> Vec<Result<FusedScene, FusionError>> {
    exec.map(frames, |(m, s)| {
        fuse_impl(Exec::Sequential, m, s).map(|(scene, _)| scene)
    })
}
