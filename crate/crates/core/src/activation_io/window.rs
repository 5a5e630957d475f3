use crate::error::SpectralError;
use crate::linalg::Matrix;

use super::dump::ActivationFrame;

/// Fixed-capacity ring holding the most recent `capacity` frames.
#[derive(Debug, Clone)]
pub struct WindowBuffer {
    capacity: usize,
    width: usize,
    ring: Vec<f64>,
    // Slot that the next push overwrites.
    head: usize,
    fill: usize,
}

impl WindowBuffer {
    pub fn new(capacity: usize, width: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        assert!(width > 0, "frame width must be positive");
        Self {
            capacity,
            width,
            ring: vec![0.0; capacity * width],
            head: 0,
            fill: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn is_full(&self) -> bool {
        self.fill == self.capacity
    }

    pub fn clear(&mut self) {
        self.head = 0;
        self.fill = 0;
    }

    pub fn push(&mut self, values: &[f64]) -> Result<(), SpectralError> {
        if values.len() != self.width {
            return Err(SpectralError::InvalidParameter(format!(
                "frame width {} does not match window width {}",
                values.len(),
                self.width
            )));
        }
        let start = self.head * self.width;
        self.ring[start..start + self.width].copy_from_slice(values);
        self.head = (self.head + 1) % self.capacity;
        self.fill = (self.fill + 1).min(self.capacity);
        Ok(())
    }

    pub fn push_token(&mut self, frame: &ActivationFrame) -> Result<(), SpectralError> {
        self.push(&frame.values)
    }

    /// Snapshot of the retained frames, oldest first. The result owns its
    /// storage; later pushes do not affect it.
    pub fn window_matrix(&self) -> Result<Matrix, SpectralError> {
        if self.fill == 0 {
            return Err(SpectralError::EmptyWindow);
        }
        let oldest = (self.head + self.capacity - self.fill) % self.capacity;
        let mut data = Vec::with_capacity(self.fill * self.width);
        for i in 0..self.fill {
            let slot = (oldest + i) % self.capacity;
            data.extend_from_slice(&self.ring[slot * self.width..(slot + 1) * self.width]);
        }
        Ok(Matrix::from_row_major(self.fill, self.width, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: u64) -> ActivationFrame {
        ActivationFrame::new(t, vec![t as f64, -(t as f64)])
    }

    #[test]
    fn first_push_fills_one() {
        let mut b = WindowBuffer::new(3, 2);
        b.push_token(&frame(1)).unwrap();
        assert_eq!(b.fill(), 1);
        assert_eq!(b.window_matrix().unwrap().row(0), &[1.0, -1.0]);
    }

    #[test]
    fn fifo_eviction() {
        let mut b = WindowBuffer::new(3, 2);
        for t in 1..=4 {
            b.push_token(&frame(t)).unwrap();
        }
        let m = b.window_matrix().unwrap();
        assert_eq!(m.rows(), 3);
        let firsts: Vec<f64> = (0..3).map(|i| m[(i, 0)]).collect();
        assert_eq!(firsts, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn hundred_into_twenty_five() {
        let mut b = WindowBuffer::new(25, 2);
        for t in 1..=100 {
            b.push_token(&frame(t)).unwrap();
        }
        let m = b.window_matrix().unwrap();
        let firsts: Vec<f64> = (0..25).map(|i| m[(i, 0)]).collect();
        let expect: Vec<f64> = (76..=100).map(|t| t as f64).collect();
        assert_eq!(firsts, expect);
    }

    #[test]
    fn empty_and_mismatch_errors() {
        let mut b = WindowBuffer::new(2, 3);
        assert_eq!(b.window_matrix(), Err(SpectralError::EmptyWindow));
        assert!(b.push(&[1.0]).is_err());
    }

    #[test]
    fn snapshot_is_detached() {
        let mut b = WindowBuffer::new(2, 2);
        b.push_token(&frame(1)).unwrap();
        b.push_token(&frame(2)).unwrap();
        let snap = b.window_matrix().unwrap();
        let before = snap.clone();
        b.push_token(&frame(3)).unwrap();
        b.push_token(&frame(4)).unwrap();
        assert_eq!(snap, before);
    }
}
