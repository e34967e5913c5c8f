use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};

use crate::geom::BBox;

type Entry = GeomWithData<Rectangle<[f64; 2]>, usize>;

/// Read-only bounding-box tree. Payloads are positions in the slice the
/// index was built from.
pub struct SpatialIndex {
    tree: RTree<Entry>,
    len: usize,
}

impl SpatialIndex {
    pub fn build(boxes: impl IntoIterator<Item = BBox>) -> Self {
        let entries: Vec<Entry> = boxes
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                GeomWithData::new(
                    Rectangle::from_corners([b.min_x, b.min_y], [b.max_x, b.max_y]),
                    i,
                )
            })
            .collect();
        let len = entries.len();
        SpatialIndex {
            tree: RTree::bulk_load(entries),
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Positions of every entry whose box intersects `query` (touching
    /// counts), ascending.
    pub fn query(&self, query: &BBox) -> Vec<usize> {
        if query.is_empty() {
            return Vec::new();
        }
        let env = AABB::from_corners([query.min_x, query.min_y], [query.max_x, query.max_y]);
        let mut hits: Vec<usize> = self
            .tree
            .locate_in_envelope_intersecting(&env)
            .map(|e| e.data)
            .collect();
        hits.sort_unstable();
        hits
    }
}
