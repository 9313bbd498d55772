"""FastAPI service exposing instance generation, inference, and benchmarks.

The core package stays framework-free; this module adapts it to HTTP.
Bench results stream as NDJSON so long runs flush partial records.
"""

import json

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse

from .. import bench
from ..engine import EngineConfig
from ..mrf import parse_uai, to_uai
from .schemas import (
    BenchRequest,
    EdgeMarginal,
    EngineOptions,
    GenRequest,
    GenResponse,
    InferRequest,
    InferResponse,
    RhoIterationSummary,
)


def engine_config(options: EngineOptions) -> EngineConfig:
    return EngineConfig(
        mode=options.mode,
        delta_init=options.delta_init,
        delta_fixed=options.delta_fixed,
        inner_gap_tol=options.eps,
        max_inner_iters=options.max_inner_iters,
        use_correction=options.correction,
        use_local_search=options.local_search,
        local_search_iters=options.local_search_iters,
    )


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(
        status_code=400,
        detail={"error": type(exc).__name__, "message": str(exc)},
    )


def create_app() -> FastAPI:
    app = FastAPI(title="trwfw", description=__doc__)

    @app.get("/health")
    def health():
        return {"status": "ok", "schema_version": bench.SCHEMA_VERSION}

    @app.post("/gen", response_model=GenResponse)
    def gen(request: GenRequest):
        try:
            if request.family == "clique":
                if request.n is None:
                    raise ValueError("clique family needs n")
                mrf = bench.gen_clique(request.n, request.theta, request.seed)
            else:
                if request.rows is None or request.cols is None:
                    raise ValueError("grid family needs rows and cols")
                mrf = bench.gen_grid(request.rows, request.cols, request.seed)
        except ValueError as exc:
            raise _bad_request(exc) from exc
        return GenResponse(
            uai=to_uai(mrf),
            family=request.family,
            num_vars=mrf.num_vars,
            num_edges=mrf.num_edges,
            seed=request.seed,
        )

    @app.post("/infer", response_model=InferResponse, response_model_exclude_none=True)
    def infer(request: InferRequest):
        try:
            mrf = parse_uai(request.uai)
            oracle = bench.make_oracle(request.options.oracle, mrf)
            result = bench.solve_instance(
                mrf,
                oracle,
                engine_config(request.options),
                max_rho_iters=request.options.rho_iters,
                rho_step=request.options.rho_step,
            )
        except (ValueError, bench.StateSpaceCapError) as exc:
            raise _bad_request(exc) from exc
        final = result.final
        mu = final.marginals
        edge_marginals = None
        if request.include_edge_marginals:
            edge_marginals = [
                EdgeMarginal(edge=mrf.edges[e], table=mu.edge_block(e).tolist())
                for e in range(mrf.num_edges)
            ]
        trace = None
        if request.include_trace:
            trace = [t.to_dict() for r in result.results for t in r.traces]
        return InferResponse(
            num_vars=mrf.num_vars,
            node_marginals=[mu.node_block(i).tolist() for i in range(mrf.num_vars)],
            edge_marginals=edge_marginals,
            logz_upper_bound=final.logz_bound,
            primal=final.primal,
            fw_gap=final.fw_gap,
            rho=final.rho.tolist(),
            map_calls=final.map_calls,
            icm_calls=final.icm_calls,
            per_rho_iteration=[
                RhoIterationSummary(
                    rho_iteration=r.rho_iteration,
                    primal=r.primal,
                    fw_gap=r.fw_gap,
                    logz_bound=r.logz_bound,
                    map_calls=r.map_calls,
                    icm_calls=r.icm_calls,
                )
                for r in result.results
            ],
            trace=trace,
        )

    @app.post("/bench")
    def run_bench(request: BenchRequest):
        try:
            spec = bench.ExperimentSpec(
                family=request.family,
                trials=request.trials,
                seed=request.seed,
                n=request.n,
                rows=request.rows,
                cols=request.cols,
                theta=request.theta,
                oracle=request.options.oracle,
                engine=engine_config(request.options),
                max_rho_iters=request.options.rho_iters,
                rho_step=request.options.rho_step,
                uai_text=request.uai,
            )
        except ValueError as exc:
            raise _bad_request(exc) from exc

        def lines():
            try:
                for record in bench.run_experiment(spec):
                    yield json.dumps(bench.record_to_dict(record)) + "\n"
            except Exception as exc:  # flush partial results, then report
                yield json.dumps(
                    {"kind": "error", "error": type(exc).__name__, "message": str(exc)}
                ) + "\n"

        return StreamingResponse(lines(), media_type="application/x-ndjson")

    return app


app = create_app()
