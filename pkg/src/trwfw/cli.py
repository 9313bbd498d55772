"""Command-line client for the inference service.

Subcommands are thin HTTP clients: by default they talk to an in-process
copy of the service over an ASGI transport, or to a remote server given
--server. Errors print a machine-readable JSON record on stderr and exit
nonzero.
"""

import json
import sys

import click
import httpx

from .bench import MetricsRecord, write_summary_csv


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # in-process mode: drive the ASGI app directly over a sync client;
    # stderr stays clean for error records
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service.app import app

    return TestClient(app)


def _fail(error: str, message: str):
    click.echo(json.dumps({"error": error, "message": message}), err=True)
    sys.exit(1)


def _check(response: httpx.Response):
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        if isinstance(detail, dict):
            _fail(detail.get("error", "HTTPError"), detail.get("message", ""))
        _fail("HTTPError", f"status {response.status_code}: {detail}")


def _write_out(text: str, out: str | None):
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        click.echo(text, nl=False)


_engine_options = [
    click.option("--oracle", type=click.Choice(["exact", "icm", "portfolio"]), default="exact"),
    click.option("--mode", type=click.Choice(["adaptive", "fixed"]), default="adaptive"),
    click.option("--delta-init", type=float, default=0.01),
    click.option("--delta-fixed", type=float, default=1e-4),
    click.option("--eps", type=float, default=0.5, help="Inner-loop FW gap tolerance."),
    click.option("--rho-iters", type=int, default=10, help="Spanning-tree FW updates."),
    click.option("--correction/--no-correction", default=True),
    click.option("--local-search/--no-local-search", default=False),
    click.option("--rho-step", type=click.Choice(["literal", "standard"]), default="literal"),
    click.option("--max-inner-iters", type=int, default=200),
]


def engine_flags(fn):
    for option in reversed(_engine_options):
        fn = option(fn)
    return fn


def _options_payload(kwargs) -> dict:
    return {
        "oracle": kwargs["oracle"],
        "mode": kwargs["mode"],
        "delta_init": kwargs["delta_init"],
        "delta_fixed": kwargs["delta_fixed"],
        "eps": kwargs["eps"],
        "rho_iters": kwargs["rho_iters"],
        "correction": kwargs["correction"],
        "local_search": kwargs["local_search"],
        "rho_step": kwargs["rho_step"],
        "max_inner_iters": kwargs["max_inner_iters"],
    }


@click.group()
@click.option("--server", default=None, help="Service URL; in-process when omitted.")
@click.pass_context
def main(ctx, server):
    """Marginal inference and benchmarks for pairwise MRFs."""
    ctx.obj = server


@main.command()
@click.option("--family", type=click.Choice(["clique", "grid"]), required=True)
@click.option("--n", type=int, default=None, help="Clique size.")
@click.option("--rows", type=int, default=None)
@click.option("--cols", type=int, default=None)
@click.option("--theta", type=float, default=1.0, help="Coupling strength.")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None, help="UAI output path.")
@click.pass_obj
def gen(server, family, n, rows, cols, theta, seed, out):
    """Emit a synthetic instance in UAI MARKOV format."""
    payload = {
        "family": family,
        "n": n,
        "rows": rows,
        "cols": cols,
        "theta": theta,
        "seed": seed,
    }
    try:
        with _client(server) as client:
            response = client.post("/gen", json=payload)
            _check(response)
            _write_out(response.json()["uai"], out)
    except httpx.HTTPError as exc:
        _fail(type(exc).__name__, str(exc))


@main.command()
@click.option("--uai", type=click.Path(exists=True), default=None, help="UAI instance file.")
@click.option("--family", type=click.Choice(["clique", "grid"]), default=None,
              help="Generate the instance instead of reading a file.")
@click.option("--n", type=int, default=None)
@click.option("--rows", type=int, default=None)
@click.option("--cols", type=int, default=None)
@click.option("--theta", type=float, default=1.0)
@click.option("--seed", type=int, default=0)
@click.option("--edge-marginals", is_flag=True, default=False)
@click.option("--trace", is_flag=True, default=False)
@click.option("--out", type=click.Path(), default=None, help="JSON result path.")
@engine_flags
@click.pass_obj
def infer(server, uai, family, n, rows, cols, theta, seed, edge_marginals, trace, out, **kwargs):
    """Run marginal inference on a single instance."""
    try:
        with _client(server) as client:
            if uai is not None:
                with open(uai) as f:
                    text = f.read()
            elif family is not None:
                response = client.post(
                    "/gen",
                    json={"family": family, "n": n, "rows": rows, "cols": cols,
                          "theta": theta, "seed": seed},
                )
                _check(response)
                text = response.json()["uai"]
            else:
                _fail("UsageError", "provide --uai or --family")
            response = client.post(
                "/infer",
                json={
                    "uai": text,
                    "options": _options_payload(kwargs),
                    "include_edge_marginals": edge_marginals,
                    "include_trace": trace,
                },
            )
            _check(response)
            _write_out(json.dumps(response.json(), indent=2) + "\n", out)
    except httpx.HTTPError as exc:
        _fail(type(exc).__name__, str(exc))


@main.command()
@click.option("--family", type=click.Choice(["clique", "grid", "uai-file"]), required=True)
@click.option("--uai", type=click.Path(exists=True), default=None)
@click.option("--n", type=int, default=None)
@click.option("--rows", type=int, default=None)
@click.option("--cols", type=int, default=None)
@click.option("--theta", type=float, default=1.0)
@click.option("--trials", type=int, default=1)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None,
              help="NDJSON output path; a .csv summary lands beside it.")
@engine_flags
@click.pass_obj
def bench(server, family, uai, n, rows, cols, theta, trials, seed, out, **kwargs):
    """Run a benchmark experiment and stream its records."""
    text = None
    if family == "uai-file":
        if uai is None:
            _fail("UsageError", "uai-file family needs --uai")
        with open(uai) as f:
            text = f.read()
    payload = {
        "family": family,
        "trials": trials,
        "seed": seed,
        "n": n,
        "rows": rows,
        "cols": cols,
        "theta": theta,
        "uai": text,
        "options": _options_payload(kwargs),
    }
    metrics = []
    try:
        with _client(server) as client:
            with client.stream("POST", "/bench", json=payload) as response:
                if response.status_code != 200:
                    response.read()
                    _check(response)
                sink = open(out, "w") if out else None
                try:
                    for line in response.iter_lines():
                        if not line:
                            continue
                        record = json.loads(line)
                        if record.get("kind") == "error":
                            if sink:
                                sink.write(line + "\n")
                            _fail(record["error"], record["message"])
                        if sink:
                            sink.write(line + "\n")
                            sink.flush()
                        else:
                            click.echo(line)
                        if record.get("kind") == "metrics":
                            record.pop("kind")
                            metrics.append(MetricsRecord(**record))
                finally:
                    if sink:
                        sink.close()
        if out and metrics:
            write_summary_csv(metrics, out + ".summary.csv")
    except httpx.HTTPError as exc:
        _fail(type(exc).__name__, str(exc))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the inference service."""
    import uvicorn

    uvicorn.run("trwfw.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
