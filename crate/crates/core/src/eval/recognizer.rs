use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::data::mask::make_binary_mask;
use crate::data::toy::{glyph_bitmap, text_left, GLYPH_CELL, GLYPH_TOP, MAX_TOY_CHARS, TOY_CHARSET};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::record::HR_SHAPE;

/// Whether a recognizer may be called from several threads at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    /// The harness serializes every call.
    Serial,
}

/// Maps a text image to a predicted string. Implementations must be
/// deterministic for fixed weights and input.
pub trait Recognizer: Send + Sync {
    fn recognize(&self, img: &ImageTensor) -> Result<String>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

impl<R: Recognizer + ?Sized> Recognizer for &R {
    fn recognize(&self, img: &ImageTensor) -> Result<String> {
        (**self).recognize(img)
    }

    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

impl<R: Recognizer + ?Sized> Recognizer for Box<R> {
    fn recognize(&self, img: &ImageTensor) -> Result<String> {
        (**self).recognize(img)
    }

    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

/// Nearest-template reader for the rendered toy corpus.
///
/// The image is brought to the HR canvas, turned into an ink map (text is the
/// minority side of the mean-gray threshold, so either polarity works), and
/// every centered layout of 1 to 8 glyph cells is scored: each cell takes its
/// closest glyph template, and ink outside the cells counts against the layout.
#[derive(Debug, Clone)]
pub struct ToyRecognizer {
    templates: Vec<(char, Vec<f32>)>,
}

impl Default for ToyRecognizer {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyRecognizer {
    pub fn new() -> Self {
        let scale = GLYPH_CELL / 8;
        let templates = TOY_CHARSET
            .chars()
            .map(|c| {
                let g = glyph_bitmap(c).expect("toy charset glyphs exist");
                let mut t = vec![0.0f32; GLYPH_CELL * GLYPH_CELL];
                for y in 0..GLYPH_CELL {
                    for x in 0..GLYPH_CELL {
                        if g[y / scale][x / scale] {
                            t[y * GLYPH_CELL + x] = 1.0;
                        }
                    }
                }
                (c, t)
            })
            .collect();
        Self { templates }
    }

    /// Soft ink map on the HR canvas: 1 at the text color, 0 at the background.
    pub fn ink_map(img: &ImageTensor) -> Result<Vec<f32>> {
        let (h, w) = HR_SHAPE;
        let img = if (img.height(), img.width()) == (h, w) {
            img.rgb()?
        } else {
            img.rgb()?.resize_bicubic(h, w)?
        };
        let gray = img.to_grayscale()?;
        let mask = make_binary_mask(&img)?;
        let (mut fg, mut nf, mut bg, mut nb) = (0.0f64, 0usize, 0.0f64, 0usize);
        for (g, m) in gray.data().iter().zip(mask.data().iter()) {
            if *m > 0.5 {
                fg += *g as f64;
                nf += 1;
            } else {
                bg += *g as f64;
                nb += 1;
            }
        }
        if nf == 0 || nb == 0 {
            return Ok(vec![0.0; h * w]);
        }
        let (fg, bg) = (fg / nf as f64, bg / nb as f64);
        let span = fg - bg;
        Ok(gray
            .data()
            .iter()
            .map(|&g| (((g as f64 - bg) / span).clamp(0.0, 1.0)) as f32)
            .collect())
    }

    fn best_glyph(&self, cell: &[f32]) -> (char, f32) {
        let mut best = (' ', f32::INFINITY);
        for (c, t) in &self.templates {
            let d: f32 = cell.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (*c, d);
            }
        }
        best
    }

    /// Best reading and its residual for every layout length.
    pub fn readings(&self, img: &ImageTensor) -> Result<Vec<(String, f32)>> {
        let ink = Self::ink_map(img)?;
        let w = HR_SHAPE.1;
        let total: f32 = ink.iter().map(|v| v * v).sum();
        let mut out = Vec::with_capacity(MAX_TOY_CHARS);
        let mut cell = vec![0.0f32; GLYPH_CELL * GLYPH_CELL];
        for n in 1..=MAX_TOY_CHARS {
            let left = text_left(n);
            let mut text = String::with_capacity(n);
            let mut cost = total;
            for i in 0..n {
                let x0 = left + i * GLYPH_CELL;
                for y in 0..GLYPH_CELL {
                    let row = (GLYPH_TOP + y) * w + x0;
                    cell[y * GLYPH_CELL..(y + 1) * GLYPH_CELL].copy_from_slice(&ink[row..row + GLYPH_CELL]);
                }
                let own: f32 = cell.iter().map(|v| v * v).sum();
                let (c, d) = self.best_glyph(&cell);
                text.push(c);
                cost += d - own;
            }
            out.push((text, cost));
        }
        Ok(out)
    }
}

impl Recognizer for ToyRecognizer {
    fn recognize(&self, img: &ImageTensor) -> Result<String> {
        let ink = Self::ink_map(img)?;
        if ink.iter().all(|&v| v == 0.0) {
            return Ok(String::new());
        }
        let readings = self.readings(img)?;
        let best = readings
            .into_iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|r| r.0)
            .unwrap_or_default();
        Ok(best)
    }
}

struct ExternalProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Adapter for recognizers living in another runtime.
///
/// The command is started once through `sh -c`. For each image the adapter
/// writes a PNG into a private scratch directory, sends its absolute path plus
/// a newline on the child's stdin, and reads one line of prediction back.
/// Calls are serialized.
pub struct ExternalRecognizer {
    command: String,
    process: Mutex<ExternalProcess>,
    scratch: PathBuf,
    counter: AtomicU64,
}

impl std::fmt::Debug for ExternalRecognizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalRecognizer")
            .field("command", &self.command)
            .finish()
    }
}

impl ExternalRecognizer {
    pub fn spawn(command: &str) -> Result<Self> {
        static INSTANCE: AtomicU64 = AtomicU64::new(0);
        let scratch = std::env::temp_dir().join(format!(
            "textsr-recognizer-{}-{}",
            std::process::id(),
            INSTANCE.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Recognizer(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            command: command.to_string(),
            process: Mutex::new(ExternalProcess {
                child,
                stdin,
                stdout,
            }),
            scratch,
            counter: AtomicU64::new(0),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl Recognizer for ExternalRecognizer {
    fn recognize(&self, img: &ImageTensor) -> Result<String> {
        let id = self.counter.fetch_add(1, Ordering::Relaxed);
        let path = self.scratch.join(format!("{id:08}.png"));
        img.rgb()?.save_png(&path)?;
        let mut p = self
            .process
            .lock()
            .map_err(|_| Error::Recognizer("recognizer lock poisoned".into()))?;
        let fail = |what: &str, e: std::io::Error| Error::Recognizer(format!("{what}: {e}"));
        writeln!(p.stdin, "{}", path.display()).map_err(|e| fail("write request", e))?;
        p.stdin.flush().map_err(|e| fail("flush request", e))?;
        let mut line = String::new();
        let n = p
            .stdout
            .read_line(&mut line)
            .map_err(|e| fail("read response", e))?;
        drop(p);
        let _ = std::fs::remove_file(&path);
        if n == 0 {
            return Err(Error::Recognizer(format!("`{}` closed its output", self.command)));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

impl Drop for ExternalRecognizer {
    fn drop(&mut self) {
        if let Ok(p) = self.process.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
        let _ = std::fs::remove_dir_all(&self.scratch);
    }
}
