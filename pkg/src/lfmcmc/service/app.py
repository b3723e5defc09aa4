"""FastAPI service wrapping the inference engine.

Chains can take a long time against real simulators, so ``POST /runs``
supports both synchronous execution (``wait: true``, the default, suitable
for desk-scale experiments) and background jobs polled via
``GET /runs/{job_id}``. Everything else (oracle, summaries, predictive,
comparison) is quick and synchronous. File paths in requests are
server-local; the CLI passes its own working-directory paths when it talks
to an in-process service.
"""

from __future__ import annotations

import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import ConfigError, NumericalDegeneracyError
from ..harness import (
    ExperimentManifest,
    RunOutputs,
    analytic_exponential_posterior,
    compare_chains,
    posterior_predictive,
    read_chain_csv,
    run_manifest,
    summarize,
)
from ..rngs import RngStream
from ..simulators import get_simulator, list_simulators
from .schemas import (
    CompareRequest,
    CompareResult,
    DimensionComparison,
    JobInfo,
    ManifestModel,
    OracleRequest,
    OracleResult,
    PredictiveRequest,
    PredictiveResult,
    RunRequest,
    RunResult,
    SimulatorInfo,
    SummarizeRequest,
    SummaryModel,
)


def _run_result(outputs: RunOutputs) -> RunResult:
    res = outputs.result
    return RunResult(
        name=outputs.name,
        chain_file=outputs.chain_file,
        metadata_file=outputs.metadata_file,
        observed_file=outputs.observed_file,
        total_sim_calls=res.counter.total_calls,
        setup_sim_calls=res.setup_calls,
        acceptance_rate=res.acceptance_rate,
        kept_samples=int(res.kept.shape[0]),
        wall_time_s=res.wall_time_s,
    )


def execute_run(request: RunRequest) -> RunResult:
    manifest = ExperimentManifest.from_dict(request.manifest.to_manifest_dict(),
                                            default_name=request.manifest.name)
    outputs = run_manifest(manifest, seed_override=request.seed, out_dir=request.out_dir)
    return _run_result(outputs)


def execute_predictive(request: PredictiveRequest) -> PredictiveResult:
    chain = read_chain_csv(request.chain_file)
    rng = RngStream(request.seed, 0)
    stats, failures = posterior_predictive(
        chain["thetas"], request.simulator, rng,
        draws_per_sample=request.draws_per_sample, thin=request.thin,
        simulator_options=request.simulator_options or None,
    )
    if request.out_file:
        spec = get_simulator(request.simulator)
        with open(request.out_file, "w") as fh:
            fh.write(",".join(spec.stat_names) + "\n")
            for row in stats:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return PredictiveResult(
        n_predictive=int(stats.shape[0]),
        n_failures=failures,
        means=list(map(float, stats.mean(axis=0))),
        stds=list(map(float, stats.std(axis=0, ddof=1) if stats.shape[0] > 1
                      else np.zeros(stats.shape[1]))),
        out_file=request.out_file,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="lfmcmc", version=__version__)
    jobs: dict[str, JobInfo] = {}
    jobs_lock = threading.Lock()

    @app.exception_handler(ConfigError)
    async def _config_error(_request, exc: ConfigError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=400, content={"detail": str(exc), "error": "config"})

    @app.exception_handler(NumericalDegeneracyError)
    async def _degeneracy_error(_request, exc: NumericalDegeneracyError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=500, content={"detail": str(exc), "error": "numerical-degeneracy"})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/simulators", response_model=list[SimulatorInfo])
    def simulators():
        out = []
        for name in list_simulators():
            spec = get_simulator(name)
            out.append(SimulatorInfo(
                name=spec.name,
                param_dim=spec.param_dim,
                stat_dim=spec.stat_dim,
                param_names=spec.param_names,
                stat_names=spec.stat_names,
                sampling_transform=list(spec.sampling_transform),
            ))
        return out

    @app.post("/oracle", response_model=OracleResult)
    def oracle(request: OracleRequest):
        try:
            shape, rate = analytic_exponential_posterior(request.alpha, request.beta,
                                                         request.n, request.y_bar)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return OracleResult(shape=shape, rate=rate, mean=shape / rate,
                            std=float(np.sqrt(shape) / rate))

    @app.post("/runs", response_model=JobInfo)
    def submit_run(request: RunRequest):
        job_id = uuid.uuid4().hex[:12]
        if request.wait:
            result = execute_run(request)
            info = JobInfo(job_id=job_id, status="done", result=result)
            with jobs_lock:
                jobs[job_id] = info
            return info
        info = JobInfo(job_id=job_id, status="queued")
        with jobs_lock:
            jobs[job_id] = info

        def worker():
            with jobs_lock:
                jobs[job_id] = JobInfo(job_id=job_id, status="running")
            try:
                result = execute_run(request)
                with jobs_lock:
                    jobs[job_id] = JobInfo(job_id=job_id, status="done", result=result)
            except Exception as exc:  # background jobs report rather than crash
                with jobs_lock:
                    jobs[job_id] = JobInfo(job_id=job_id, status="error", error=str(exc))

        threading.Thread(target=worker, daemon=True).start()
        return info

    @app.get("/runs/{job_id}", response_model=JobInfo)
    def job_status(job_id: str):
        with jobs_lock:
            info = jobs.get(job_id)
        if info is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        return info

    @app.post("/summarize", response_model=SummaryModel)
    def summarize_endpoint(request: SummarizeRequest):
        summary = summarize(request.chain_file, out_dir=request.out_dir)
        return SummaryModel(**summary.to_dict())

    @app.post("/predictive", response_model=PredictiveResult)
    def predictive(request: PredictiveRequest):
        return execute_predictive(request)

    @app.post("/compare", response_model=CompareResult)
    def compare(request: CompareRequest):
        rows = compare_chains(request.chain_a, request.chain_b)
        return CompareResult(dimensions=[DimensionComparison(**row) for row in rows])

    return app


app = create_app()
