//! On-disk formats: edge lists, mixing-matrix and beamformer CSVs, and the
//! binary channel/frame dumps used to replay identical channel draws.
//!
//! Binary dumps start with four little-endian `u64` words `M, N_T, N_R, L`
//! followed by little-endian `f64` pairs `(re, im)`:
//!
//! * channel dumps hold `L` rounds; each round lists `H⟨i,j⟩` for every
//!   linked ordered pair in row-major pair order (`i` receiver, `j`
//!   transmitter), each matrix `N_R × N_T` row-major;
//! * frame dumps set `N_R = 0`, `L` to the frame length, and hold for every
//!   round the `N_T × L` transmit block of each device, row-major.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use oadfl_core::beamopt::BeamformerSet;
use oadfl_core::channel::ChannelSet;
use oadfl_core::linalg::{CMatrix, CVector, Complex64, RMatrix};
use oadfl_core::mixing::delta;
use oadfl_core::run::ChannelSource;
use oadfl_core::topology::TopologyGraph;
use sha2::{Digest, Sha256};

use crate::error::{format_err, io_err, CliError, Result};

const HEADER_BYTES: u64 = 32;

pub fn write_edge_list(path: &Path, graph: &TopologyGraph) -> Result<()> {
    let mut out = format!("M={}\n", graph.num_devices());
    for (i, j) in graph.edges() {
        out.push_str(&format!("{i} {j}\n"));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn read_edge_list(path: &Path) -> Result<TopologyGraph> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_edge_list(&text).map_err(|msg| format_err(path, msg))
}

pub fn parse_edge_list(text: &str) -> std::result::Result<TopologyGraph, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, head) = lines.next().ok_or("empty edge list")?;
    let m: usize = head
        .trim()
        .strip_prefix("M=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format!("line 1: expected `M=<int>`, got `{head}`"))?;
    let mut edges = Vec::new();
    for (n, line) in lines {
        let mut parts = line.split_whitespace().map(str::parse::<usize>);
        match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(i)), Some(Ok(j)), None) => edges.push((i, j)),
            _ => return Err(format!("line {}: expected `i j`, got `{line}`", n + 1)),
        }
    }
    TopologyGraph::from_edges(m, &edges).map_err(|e| e.to_string())
}

/// Dense CSV with 17 significant digits, preceded by a `#` line recording
/// `δ(W)` and where the topology came from.
pub fn write_mixing_csv(path: &Path, w: &RMatrix, topology: &str) -> Result<()> {
    let mut out = format!("# delta_W={:.16e} topology={topology}\n", delta(w)?);
    for i in 0..w.nrows() {
        let row: Vec<String> = (0..w.ncols()).map(|j| format!("{:.16e}", w[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Matrix and the metadata line, if any.
pub fn read_mixing_csv(path: &Path) -> Result<(RMatrix, Option<String>)> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut meta = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix('#') {
            meta.get_or_insert_with(|| rest.trim().to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, format!("line {}: {e}", n + 1)))?;
        rows.push(row);
    }
    let m = rows.len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(format_err(path, "mixing matrix must be square and non-empty"));
    }
    Ok((RMatrix::from_fn(m, m, |i, j| rows[i][j]), meta))
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct BeamRow {
    kind: String,
    device: usize,
    index: usize,
    re: f64,
    im: f64,
}

/// Rows `u|f, device, index, re, im`, after a `#` line naming the channel
/// dump the beams were designed for.
pub fn write_beams_csv(path: &Path, beams: &BeamformerSet, channel_dump: &str) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut file = BufWriter::new(file);
    writeln!(file, "# channel_dump={channel_dump}").map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for (kind, set) in [("u", &beams.transmit), ("f", &beams.receive)] {
        for (device, v) in set.iter().enumerate() {
            for (index, z) in v.iter().enumerate() {
                w.serialize(BeamRow {
                    kind: kind.to_string(),
                    device,
                    index,
                    re: z.re,
                    im: z.im,
                })?;
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_beams_csv(path: &Path) -> Result<(BeamformerSet, String)> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err(path))?;
    let source = first
        .trim()
        .strip_prefix("# channel_dump=")
        .ok_or_else(|| format_err(path, "missing `# channel_dump=` line"))?
        .to_string();
    let mut rows: Vec<BeamRow> = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        rows.push(row?);
    }
    let devices = rows.iter().map(|r| r.device + 1).max().unwrap_or(0);
    let len = |kind: &str| rows.iter().filter(|r| r.kind == kind).map(|r| r.index + 1).max().unwrap_or(0);
    let mut beams = BeamformerSet::zeros(devices, len("u"), len("f"));
    for r in rows {
        let target = match r.kind.as_str() {
            "u" => &mut beams.transmit[r.device],
            "f" => &mut beams.receive[r.device],
            other => return Err(format_err(path, format!("unknown beam kind `{other}`"))),
        };
        target[r.index] = Complex64::new(r.re, r.im);
    }
    Ok((beams, source))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn write_header(out: &mut impl Write, words: [u64; 4]) -> std::io::Result<()> {
    for w in words {
        out.write_all(&w.to_le_bytes())?;
    }
    Ok(())
}

fn write_matrix(out: &mut impl Write, m: &CMatrix) -> std::io::Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let z = m[(r, c)];
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Streams channel rounds into a dump file.
pub struct ChannelDumpWriter {
    out: BufWriter<File>,
    path: PathBuf,
    shape: (usize, usize, usize),
}

impl ChannelDumpWriter {
    pub fn create(path: &Path, devices: usize, n_tx: usize, n_rx: usize, rounds: usize) -> Result<Self> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        write_header(&mut out, [devices as u64, n_tx as u64, n_rx as u64, rounds as u64]).map_err(io_err(path))?;
        Ok(Self {
            out,
            path: path.to_path_buf(),
            shape: (devices, n_tx, n_rx),
        })
    }

    pub fn write_round(&mut self, chans: &ChannelSet) -> Result<()> {
        if (chans.num_devices(), chans.n_tx(), chans.n_rx()) != self.shape {
            return Err(format_err(&self.path, "channel set shape differs from the dump header"));
        }
        for (i, j) in chans.links() {
            let h = chans.get(i, j).expect("listed link has a channel");
            write_matrix(&mut self.out, h).map_err(io_err(&self.path))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

/// Writes `rounds` rounds drawn from `source` to `path`.
pub fn dump_channels(
    path: &Path,
    source: &mut dyn ChannelSource,
    graph: &TopologyGraph,
    n_tx: usize,
    n_rx: usize,
    rounds: usize,
) -> Result<()> {
    let mut w = ChannelDumpWriter::create(path, graph.num_devices(), n_tx, n_rx, rounds)?;
    for t in 0..rounds {
        w.write_round(&source.round_channels(t, graph)?)?;
    }
    w.finish()
}

/// Reads channel rounds back from a dump, one seek per round.
pub struct ChannelReplay {
    reader: BufReader<File>,
    path: PathBuf,
    n_tx: usize,
    n_rx: usize,
    rounds: usize,
    links: usize,
    noise_variance: f64,
}

impl ChannelReplay {
    /// Opens `path` for `graph`; the noise variance is not stored in the dump
    /// and comes from the run configuration.
    pub fn open(path: &Path, graph: &TopologyGraph, noise_variance: f64) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let size = file.metadata().map_err(io_err(path))?.len();
        let mut reader = BufReader::new(file);
        let mut header = [0u8; HEADER_BYTES as usize];
        reader
            .read_exact(&mut header)
            .map_err(|_| format_err(path, "truncated header"))?;
        let word = |k: usize| u64::from_le_bytes(header[8 * k..8 * k + 8].try_into().expect("8 bytes")) as usize;
        let (m, n_tx, n_rx, rounds) = (word(0), word(1), word(2), word(3));
        if m != graph.num_devices() {
            return Err(format_err(path, format!("dump has {m} devices, graph has {}", graph.num_devices())));
        }
        let links = 2 * graph.num_edges();
        let expected = HEADER_BYTES + (rounds * links * n_tx * n_rx * 16) as u64;
        if size != expected {
            return Err(format_err(
                path,
                format!("size {size} does not match {rounds} rounds over {links} links ({expected} bytes)"),
            ));
        }
        Ok(Self {
            reader,
            path: path.to_path_buf(),
            n_tx,
            n_rx,
            rounds,
            links,
            noise_variance,
        })
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn antennas(&self) -> (usize, usize) {
        (self.n_tx, self.n_rx)
    }

    fn read_f64(&mut self) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        self.reader.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn read_round(&mut self, round: usize, graph: &TopologyGraph) -> Result<ChannelSet> {
        let per_round = (self.links * self.n_tx * self.n_rx * 16) as u64;
        self.reader
            .seek(SeekFrom::Start(HEADER_BYTES + round as u64 * per_round))
            .map_err(io_err(&self.path))?;
        let (n_tx, n_rx) = (self.n_tx, self.n_rx);
        let mut mats = Vec::with_capacity(self.links);
        for _ in 0..self.links {
            let mut h = CMatrix::zeros(n_rx, n_tx);
            for r in 0..n_rx {
                for c in 0..n_tx {
                    let re = self.read_f64().map_err(io_err(&self.path))?;
                    let im = self.read_f64().map_err(io_err(&self.path))?;
                    h[(r, c)] = Complex64::new(re, im);
                }
            }
            mats.push(h);
        }
        // `from_matrices` visits links in the same row-major order as the dump.
        let mut it = mats.into_iter();
        Ok(ChannelSet::from_matrices(graph, n_tx, n_rx, self.noise_variance, |_, _| {
            it.next().expect("link count checked against file size")
        })?)
    }
}

impl ChannelSource for ChannelReplay {
    fn round_channels(&mut self, round: usize, graph: &TopologyGraph) -> oadfl_core::Result<ChannelSet> {
        if round >= self.rounds {
            return Err(oadfl_core::Error::InvalidArgument("channel dump has fewer rounds than the run"));
        }
        self.read_round(round, graph).map_err(|e| {
            log::error!("{e}");
            match e {
                CliError::Core(inner) => inner,
                _ => oadfl_core::Error::DegenerateInput("unreadable channel dump"),
            }
        })
    }
}

/// Streams per-round transmit blocks into a frame dump.
pub struct FrameDumpWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl FrameDumpWriter {
    pub fn create(path: &Path, devices: usize, n_tx: usize, frame_len: usize) -> Result<Self> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        write_header(&mut out, [devices as u64, n_tx as u64, 0, frame_len as u64]).map_err(io_err(path))?;
        Ok(Self {
            out,
            path: path.to_path_buf(),
        })
    }

    pub fn write_round(&mut self, frames: &[CMatrix]) -> Result<()> {
        for f in frames {
            write_matrix(&mut self.out, f).map_err(io_err(&self.path))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

/// Reads a whole frame dump: header words and one block list per round.
pub fn read_frame_dump(path: &Path) -> Result<([u64; 4], Vec<Vec<CMatrix>>)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() < HEADER_BYTES as usize {
        return Err(format_err(path, "truncated header"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    let header = [word(0), word(1), word(2), word(3)];
    let (m, n_tx, len) = (header[0] as usize, header[1] as usize, header[3] as usize);
    let block = n_tx * len * 16;
    let body = &bytes[HEADER_BYTES as usize..];
    if m == 0 || block == 0 || body.len() % (m * block) != 0 {
        return Err(format_err(path, "frame dump body is not a whole number of rounds"));
    }
    let value = |off: usize| f64::from_le_bytes(body[off..off + 8].try_into().expect("8 bytes"));
    let rounds = body.len() / (m * block);
    let mut out = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let frames = (0..m)
            .map(|d| {
                let base = (t * m + d) * block;
                CMatrix::from_fn(n_tx, len, |r, c| {
                    let off = base + (r * len + c) * 16;
                    Complex64::new(value(off), value(off + 8))
                })
            })
            .collect();
        out.push(frames);
    }
    Ok((header, out))
}

/// Complex vector from interleaved `(re, im)` pairs.
pub fn cvector_from_pairs(pairs: &[(f64, f64)]) -> CVector {
    CVector::from_iterator(pairs.len(), pairs.iter().map(|&(re, im)| Complex64::new(re, im)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use oadfl_core::channel::{sample_round, ChannelConfig};
    use oadfl_core::mixing::metropolis_init;
    use oadfl_core::topology::{generate_named, generate_random, NamedTopology};

    #[test]
    fn edge_list_round_trip_and_diagnostics() {
        let g = generate_random(7, 0.4, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        write_edge_list(&path, &g).unwrap();
        assert_eq!(read_edge_list(&path).unwrap(), g);
        assert!(parse_edge_list("N=3\n0 1\n").unwrap_err().contains("line 1"));
        assert!(parse_edge_list("M=3\n0 1\n1 x\n").unwrap_err().contains("line 3"));
        assert!(parse_edge_list("M=3\n0 1\n").is_err());
    }

    #[test]
    fn mixing_csv_is_exact() {
        let g = generate_named(NamedTopology::Ring, 5).unwrap();
        let w = metropolis_init(&g);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        write_mixing_csv(&path, &w, "ring").unwrap();
        let (back, meta) = read_mixing_csv(&path).unwrap();
        assert_eq!(back, w);
        let meta = meta.unwrap();
        assert!(meta.starts_with("delta_W=") && meta.ends_with("topology=ring"), "{meta}");
    }

    #[test]
    fn beams_csv_round_trip() {
        let mut beams = BeamformerSet::zeros(3, 2, 4);
        beams.transmit[1][0] = Complex64::new(0.25, -1.5e-9);
        beams.receive[2][3] = Complex64::new(-3.0, 1.0 / 3.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        write_beams_csv(&path, &beams, "chan.bin").unwrap();
        let (back, source) = read_beams_csv(&path).unwrap();
        assert_eq!(back, beams);
        assert_eq!(source, "chan.bin");
    }

    #[test]
    fn channel_dump_replays_bit_identically() {
        let g = generate_random(5, 0.3, 8).unwrap();
        let cfg = ChannelConfig::new(10.0, 1.0).unwrap();
        let rounds: Vec<ChannelSet> = (0..3).map(|t| sample_round(&g, &cfg, 2, 3, t).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut w = ChannelDumpWriter::create(&path, 5, 2, 3, 3).unwrap();
        rounds.iter().for_each(|c| w.write_round(c).unwrap());
        w.finish().unwrap();
        let mut replay = ChannelReplay::open(&path, &g, cfg.noise_variance()).unwrap();
        assert_eq!(replay.rounds(), 3);
        for t in [2, 0, 1] {
            assert_eq!(replay.round_channels(t, &g).unwrap(), rounds[t]);
        }
        assert!(replay.round_channels(3, &g).is_err());
        let other = generate_random(5, 0.0, 8).unwrap();
        assert!(ChannelReplay::open(&path, &other, 0.1).is_err());
    }

    #[test]
    fn frame_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let frames: Vec<CMatrix> = (0..2)
            .map(|d| CMatrix::from_fn(3, 4, |r, c| Complex64::new(d as f64 + r as f64, c as f64 * 0.5)))
            .collect();
        let mut w = FrameDumpWriter::create(&path, 2, 3, 4).unwrap();
        w.write_round(&frames).unwrap();
        w.write_round(&frames).unwrap();
        w.finish().unwrap();
        let (header, rounds) = read_frame_dump(&path).unwrap();
        assert_eq!(header, [2, 3, 0, 4]);
        assert_eq!(rounds.len(), 2);
        assert_eq!(rounds[1], frames);
    }

    #[test]
    fn hashes_differ_with_content() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        std::fs::write(&a, b"abc").unwrap();
        std::fs::write(&b, b"abd").unwrap();
        assert_eq!(
            sha256_file(&a).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_ne!(sha256_file(&a).unwrap(), sha256_file(&b).unwrap());
    }
}
