use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2};

use super::real::Real;

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All tensors of one kind (learnable parameters or running buffers) packed
/// into a single flat vector. Gradients share the same layout, so optimizers
/// and checkpoints work on plain slices.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    values: Vec<S>,
    segments: Vec<Segment>,
}

impl<S: Real> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore {
            values: Vec::new(),
            segments: Vec::new(),
        }
    }
}

impl<S: Real> ParamStore<S> {
    pub(crate) fn push(
        &mut self,
        name: String,
        shape: Vec<usize>,
        mut init: impl FnMut() -> f64,
    ) -> ParamId {
        let segment = Segment {
            name,
            shape,
            offset: self.values.len(),
        };
        self.values
            .extend((0..segment.len()).map(|_| S::lit(init())));
        self.segments.push(segment);
        ParamId(self.segments.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: ParamId) -> &Segment {
        &self.segments[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[S] {
        &self.values[self.segments[id.0].range()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [S] {
        let range = self.segments[id.0].range();
        &mut self.values[range]
    }

    pub(crate) fn vector(&self, id: ParamId) -> ArrayView1<'_, S> {
        ArrayView1::from(self.get(id))
    }

    pub(crate) fn matrix(&self, id: ParamId, rows: usize, cols: usize) -> ArrayView2<'_, S> {
        ArrayView2::from_shape((rows, cols), self.get(id)).expect("segment shape")
    }
}

/// Adds `values` (in row-major order) into the gradient slot of `id`.
pub(crate) fn accumulate<'a, S: Real>(
    grads: &mut [S],
    store: &ParamStore<S>,
    id: ParamId,
    values: impl IntoIterator<Item = &'a S>,
) {
    let range = store.segment(id).range();
    let slot = &mut grads[range];
    let mut n = 0;
    for (g, &v) in slot.iter_mut().zip(values) {
        *g += v;
        n += 1;
    }
    debug_assert_eq!(n, slot.len());
}
