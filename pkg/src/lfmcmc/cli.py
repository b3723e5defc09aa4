"""Command-line front end: a thin client over the service layer.

Every verb builds the same pydantic request the HTTP API takes and either
executes it in-process (the default) or posts it to a running server when
``--server URL`` is given. Exit codes: 0 success, 2 configuration error,
3 numerical-degeneracy abort.

Verbs: run, summarize, predictive, oracle, compare, serve.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError, NumericalDegeneracyError
from .service.schemas import (
    CompareRequest,
    ManifestModel,
    OracleRequest,
    PredictiveRequest,
    RunRequest,
    SummarizeRequest,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERACY = 3


class _Client:
    """Dispatches requests either in-process or to a remote server."""

    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        response = httpx.post(f"{self.server}{path}", json=payload, timeout=None)
        if response.status_code >= 400:
            detail = response.json().get("detail", response.text)
            if response.status_code == 400:
                raise ConfigError(str(detail))
            raise RuntimeError(f"server error {response.status_code}: {detail}")
        return response.json()

    def run(self, request: RunRequest) -> dict:
        if self.server:
            return self._post("/runs", json.loads(request.model_dump_json()))
        from .service.app import execute_run

        return {"status": "done", "result": execute_run(request).model_dump()}

    def summarize(self, request: SummarizeRequest) -> dict:
        if self.server:
            return self._post("/summarize", request.model_dump())
        from .harness import summarize

        return summarize(request.chain_file, out_dir=request.out_dir).to_dict()

    def predictive(self, request: PredictiveRequest) -> dict:
        if self.server:
            return self._post("/predictive", request.model_dump())
        from .service.app import execute_predictive

        return execute_predictive(request).model_dump()

    def oracle(self, request: OracleRequest) -> dict:
        if self.server:
            return self._post("/oracle", request.model_dump())
        import numpy as np

        from .harness import analytic_exponential_posterior

        try:
            shape, rate = analytic_exponential_posterior(request.alpha, request.beta,
                                                         request.n, request.y_bar)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return {"shape": shape, "rate": rate, "mean": shape / rate,
                "std": float(np.sqrt(shape) / rate)}

    def compare(self, request: CompareRequest) -> dict:
        if self.server:
            return self._post("/compare", request.model_dump())
        from .harness import compare_chains

        return {"dimensions": compare_chains(request.chain_a, request.chain_b)}


def _cmd_run(args, client: _Client) -> int:
    from .harness import ExperimentManifest

    requests = []
    for path in args.manifest:
        manifest = ExperimentManifest.from_file(path)
        model = ManifestModel(**manifest.raw)
        requests.append(RunRequest(manifest=model, seed=args.seed, out_dir=args.out, wait=True))

    def execute(req: RunRequest) -> dict:
        return client.run(req)

    if args.threads > 1 and len(requests) > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(execute, requests))
    else:
        results = [execute(req) for req in requests]
    for res in results:
        print(json.dumps(res, indent=2))
    return EXIT_OK


def _cmd_summarize(args, client: _Client) -> int:
    out = client.summarize(SummarizeRequest(chain_file=args.chain, out_dir=args.out))
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_predictive(args, client: _Client) -> int:
    out = client.predictive(PredictiveRequest(
        chain_file=args.chain, simulator=args.simulator,
        draws_per_sample=args.draws_per_sample, thin=args.thin,
        seed=args.seed, out_file=args.out_file,
    ))
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_oracle(args, client: _Client) -> int:
    out = client.oracle(OracleRequest(alpha=args.alpha, beta=args.beta, n=args.n, y_bar=args.y_bar))
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_compare(args, client: _Client) -> int:
    out = client.compare(CompareRequest(chain_a=args.chain_a, chain_b=args.chain_b))
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_serve(args, _client: _Client) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfmcmc",
                                     description="Likelihood-free MCMC experiment harness")
    parser.add_argument("--server", default=None,
                        help="base URL of a running lfmcmc server; default runs in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute experiment manifests")
    p_run.add_argument("--manifest", action="append", required=True,
                       help="manifest JSON path (repeatable)")
    p_run.add_argument("--seed", type=int, default=None, help="override the manifest seed")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument("--threads", type=int, default=1,
                       help="run this many manifests concurrently")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="summarize a chain file")
    p_sum.add_argument("--chain", required=True)
    p_sum.add_argument("--out", default=None, help="directory for histogram/scatter data files")
    p_sum.set_defaults(func=_cmd_summarize)

    p_pred = sub.add_parser("predictive", help="posterior-predictive simulation from a chain")
    p_pred.add_argument("--chain", required=True)
    p_pred.add_argument("--simulator", required=True)
    p_pred.add_argument("--draws-per-sample", type=int, default=1)
    p_pred.add_argument("--thin", type=int, default=1)
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--out-file", default=None)
    p_pred.set_defaults(func=_cmd_predictive)

    p_oracle = sub.add_parser("oracle", help="analytic posterior for the exponential toy")
    p_oracle.add_argument("--alpha", type=float, required=True)
    p_oracle.add_argument("--beta", type=float, required=True)
    p_oracle.add_argument("--n", type=int, required=True)
    p_oracle.add_argument("--y-bar", type=float, required=True)
    p_oracle.set_defaults(func=_cmd_oracle)

    p_cmp = sub.add_parser("compare", help="compare two chain files")
    p_cmp.add_argument("--chain-a", required=True)
    p_cmp.add_argument("--chain-b", required=True)
    p_cmp.set_defaults(func=_cmd_compare)

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.set_defaults(func=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    client = _Client(args.server)
    try:
        return args.func(args, client)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDegeneracyError as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERACY


if __name__ == "__main__":
    sys.exit(main())
