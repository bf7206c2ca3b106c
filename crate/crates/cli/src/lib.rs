//! The `nerflens` command line.
//!
//! Each subcommand is a thin wrapper over library calls; the `*_files`
//! helpers here are what the binary runs, and they are public so the
//! outputs can be checked against direct library use.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data error (bad
//! file, bad value inside a file, failed render).

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Point3;
use serde::Deserialize;
use serde_json::json;

use nerflens::bench::{rows_to_csv, sweep, SweepConfig, SweepRow, Trajectory};
use nerflens::edit::{load_mask, save_mask, EditLog};
use nerflens::field::{
    make_procedural_grid, rebuild_bitfield, CropBox, OccupancyBitfield, RadianceFieldGrid, SceneSpec,
    DEFAULT_DENSITY_THRESHOLD,
};
use nerflens::formats::{grid_hash, read_grid, read_json, write_atomic, write_depth, write_grid, write_png};
use nerflens::fusion::{CompositeOutput, CompositeSettings, FusedScene, FusionMode, TunnelConfig};
use nerflens::geom::{quat_from_xyzw, Trs};
use nerflens::lens::{Camera, LensConfig};
use nerflens::raster::{load_obj, RasterStyle};
use nerflens::Error;
use nerflens_service::session::{CAMERA_FAR, CAMERA_NEAR, DEFAULT_CONTEXT_FOV};
use nerflens_service::{serve, Session, SessionFiles, DEFAULT_PORT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nerflens", version, about = "Focus+context volume rendering tools")]
pub struct Cli {
    /// Worker threads for rendering (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voxelize a scene description into a grid file.
    MakeScene(MakeSceneArgs),
    /// Render one lens frame, optionally fused with a mesh.
    Render(RenderArgs),
    /// Replay an edit log and write the resulting mask.
    Edit(EditArgs),
    /// Replay a trajectory over the FoV x PPD grid and write CSV.
    Bench(BenchArgs),
    /// Serve the WebSocket stream.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct MakeSceneArgs {
    /// Scene description (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output grid (.mnlv).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Overrides the random blob seed in the description.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Camera pose: {"pos": [x, y, z], "quat": [x, y, z, w]}.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 20.0)]
    pub ppd: f64,
    /// CAD mesh (.obj).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value = "solid", value_parser = ["solid", "wireframe"])]
    pub style: String,
    /// Occupancy mask (.mnlb).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Fusion mode; needs --mesh.
    #[arg(long, default_value = "none", value_parser = ["none", "tunnel", "occlude", "merge"])]
    pub fuse: String,
    /// Raster weight in merge mode.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Field of view of the context frame in tunnel mode.
    #[arg(long, default_value_t = DEFAULT_CONTEXT_FOV)]
    pub context_fov: f64,
    /// Output PNG.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Lens depth map (.f32).
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Frame statistics (JSON).
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Edit log (JSON lines).
    #[arg(long)]
    pub log: PathBuf,
    /// Output mask (.mnlb).
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Trajectory (JSON).
    #[arg(long)]
    pub traj: PathBuf,
    /// Adds a masked row per configuration.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60")]
    pub fov: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "15,20,25")]
    pub ppd: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Render one eye instead of two.
    #[arg(long, default_value_t = false)]
    pub mono: bool,
    /// Output CSV.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 20.0)]
    pub ppd: f64,
}

/// Camera pose file. Same fields as the stream protocol's pose message.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub pos: [f64; 3],
    /// `[x, y, z, w]`, camera to world.
    pub quat: [f64; 4],
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

fn default_near() -> f64 {
    CAMERA_NEAR
}

fn default_far() -> f64 {
    CAMERA_FAR
}

impl PoseFile {
    pub fn camera(&self) -> Result<Camera, Error> {
        Camera::new(Point3::from(self.pos), quat_from_xyzw(self.quat)?, self.near, self.far)
    }
}

pub fn make_scene_files(spec: &Path, seed: Option<u64>) -> Result<RadianceFieldGrid, Error> {
    let mut spec: SceneSpec = read_json(spec)?;
    if let (Some(seed), Some(rb)) = (seed, spec.random_blobs.as_mut()) {
        rb.seed = seed;
    }
    make_procedural_grid(&spec)
}

/// Grid with its mask: the file if given, else everything above threshold.
pub fn load_scene(scene: &Path, mask: Option<&Path>) -> Result<(RadianceFieldGrid, OccupancyBitfield), Error> {
    let grid = read_grid(scene)?;
    let bits = match mask {
        Some(m) => load_mask(m, &grid, DEFAULT_DENSITY_THRESHOLD)?,
        None => rebuild_bitfield(&grid, DEFAULT_DENSITY_THRESHOLD).0,
    };
    Ok((grid, bits))
}

pub fn render_files(a: &RenderArgs) -> Result<CompositeOutput, Error> {
    let mode: FusionMode = a.fuse.parse()?;
    if mode != FusionMode::None && a.mesh.is_none() {
        return Err(Error::Invalid(format!("--fuse {} needs --mesh", a.fuse)));
    }
    let (grid, bits) = load_scene(&a.scene, a.mask.as_deref())?;
    let mesh = a.mesh.as_deref().map(load_obj).transpose()?;
    let scene = FusedScene::new(grid, bits, mesh)?;
    let pose: PoseFile = read_json(&a.pose)?;
    let cam = pose.camera()?;
    let lens = LensConfig { fov_deg: a.fov, ppd: a.ppd, ..LensConfig::default() };
    lens.validate(&cam)?;
    let tunnel = TunnelConfig { merge_alpha: a.alpha, ..TunnelConfig::default() };
    tunnel.validate()?;
    let style: RasterStyle = a.style.parse()?;
    let settings = CompositeSettings {
        lens,
        march: scene.march_defaults(),
        mode,
        tunnel,
        style,
        context_fov_deg: a.context_fov.max(a.fov),
    };
    let out = scene.render(&cam, &settings)?;
    let frame = out.frame.flatten(settings.march.background);
    write_png(&frame, &a.output)?;
    if let Some(p) = &a.depth {
        write_depth(&out.depth, p)?;
    }
    if let Some(p) = &a.stats {
        let s = out.stats;
        let v = json!({
            "width": frame.width,
            "height": frame.height,
            "rays_total": s.rays_total,
            "rays_active": s.rays_active,
            "samples_total": s.samples_total,
            "wall_time_ms": s.wall_time_ms,
            "skipped_voxel_spans": s.skipped_voxel_spans,
        });
        write_atomic(p, format!("{v:#}\n").as_bytes())?;
    }
    Ok(out)
}

pub fn edit_files(scene: &Path, log: &Path, output: &Path) -> Result<OccupancyBitfield, Error> {
    let mut grid = read_grid(scene)?;
    let log = EditLog::read(log)?;
    let bits = log.replay(&mut grid, &Trs::identity(), DEFAULT_DENSITY_THRESHOLD)?;
    save_mask(&bits, output)?;
    Ok(bits)
}

pub fn bench_files(a: &BenchArgs) -> Result<Vec<SweepRow>, Error> {
    let (grid, bits) = load_scene(&a.scene, None)?;
    let mask = a.mask.as_deref().map(|m| load_mask(m, &grid, DEFAULT_DENSITY_THRESHOLD)).transpose()?;
    let traj: Trajectory = read_json(&a.traj)?;
    let crop = CropBox::around_grid(grid.geometry(), Trs::identity());
    let cfg = SweepConfig {
        fov_list: a.fov.clone(),
        ppd_list: a.ppd.clone(),
        repeat: a.repeat,
        stereo: !a.mono,
        ..SweepConfig::default()
    };
    let rows = sweep(&traj, &grid, &bits, &crop, mask.as_ref(), &cfg)?;
    write_atomic(&a.output, rows_to_csv(&rows)?.as_bytes())?;
    Ok(rows)
}

fn serve_files(a: &ServeArgs) -> Result<(), Error> {
    let files = SessionFiles { scene: a.scene.clone(), mesh: a.mesh.clone(), mask: a.mask.clone() };
    let lens = LensConfig { fov_deg: a.fov, ppd: a.ppd, ..LensConfig::default() };
    let session = Session::open(&files, lens).map_err(Error::Invalid)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::Invalid(format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("serving ws://{}/stream", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, session, shutdown).await
    })?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::MakeScene(a) => {
            let grid = make_scene_files(&a.spec, a.seed)?;
            write_grid(&grid, &a.output)?;
            let [h, w, l] = grid.dims();
            println!("wrote {} ({h}x{w}x{l}, {})", a.output.display(), grid_hash(&grid));
        }
        Command::Render(a) => {
            let out = render_files(a)?;
            println!(
                "wrote {} ({}x{}, {} samples, {:.1} ms)",
                a.output.display(),
                out.frame.width,
                out.frame.height,
                out.stats.samples_total,
                out.stats.wall_time_ms
            );
        }
        Command::Edit(a) => {
            let bits = edit_files(&a.scene, &a.log, &a.output)?;
            println!("wrote {} ({} of {} voxels visible)", a.output.display(), bits.count_ones(), bits.len());
        }
        Command::Bench(a) => {
            let rows = bench_files(a)?;
            println!("wrote {} ({} rows)", a.output.display(), rows.len());
        }
        Command::Serve(a) => serve_files(a)?,
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if cli.threads > 0 {
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
