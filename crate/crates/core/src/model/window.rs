//! Token-grid geometry for (shifted) window attention.
//!
//! Tokens are stored one per row with x varying fastest. A window layout is
//! a permutation that lists the tokens window by window; the shifted layout
//! first rolls the grid by half a window along every axis.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowLayout {
    pub grid: [usize; 3],
    pub window: [usize; 3],
    pub shift: [usize; 3],
    /// Row `p` of the window-ordered matrix is token `forward[p]`.
    pub forward: Arc<Vec<usize>>,
    /// Inverse permutation of `forward`.
    pub inverse: Arc<Vec<usize>>,
}

fn token_index(grid: [usize; 3], c: [usize; 3]) -> usize {
    c[0] + grid[0] * (c[1] + grid[1] * c[2])
}

impl WindowLayout {
    pub fn new(grid: [usize; 3], window: [usize; 3], shifted: bool) -> Result<Self> {
        for a in 0..3 {
            if window[a] == 0 || grid[a] == 0 || grid[a] % window[a] != 0 {
                return Err(Error::Shape(format!(
                    "window {window:?} does not tile token grid {grid:?}"
                )));
            }
        }
        let shift = if shifted { window.map(|w| w / 2) } else { [0; 3] };
        let nwin = [0, 1, 2].map(|a| grid[a] / window[a]);
        let total = grid.iter().product();
        let mut forward = Vec::with_capacity(total);
        for wz in 0..nwin[2] {
            for wy in 0..nwin[1] {
                for wx in 0..nwin[0] {
                    for lz in 0..window[2] {
                        for ly in 0..window[1] {
                            for lx in 0..window[0] {
                                let local = [wx * window[0] + lx, wy * window[1] + ly, wz * window[2] + lz];
                                // roll by -shift: new[i] = old[i + shift]
                                let src = [0, 1, 2].map(|a| (local[a] + shift[a]) % grid[a]);
                                forward.push(token_index(grid, src));
                            }
                        }
                    }
                }
            }
        }
        let mut inverse = vec![0; total];
        for (p, &t) in forward.iter().enumerate() {
            inverse[t] = p;
        }
        Ok(Self {
            grid,
            window,
            shift,
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
        })
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window.iter().product()
    }

    pub fn windows(&self) -> usize {
        self.forward.len() / self.tokens_per_window()
    }
}
