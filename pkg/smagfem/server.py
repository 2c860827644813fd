"""MCP server exposing the case catalog, runs and studies."""

import asyncio
import json
import logging
from dataclasses import asdict
from urllib.parse import urlparse

import httpx
from mcp.server import Server
from mcp.server.stdio import stdio_server
from mcp.types import (
    GetPromptResult,
    Prompt,
    PromptMessage,
    Resource,
    TextContent,
    Tool,
)

from .cases import CASES, get_case
from .config import config_for_case, serialize_config
from .errors import SmagfemError
from .mesh import import_mesh, macro_refine
from .properties import run_all
from .solver import convergence_study, run_simulation
from .spaces import build_system

logger = logging.getLogger(__name__)

# Largest run the server accepts per tool call.
MAX_STEPS = 2000
MAX_CELLS = 64

CONFIG_SCHEMA = {
    "case": "case id: shear_layer, cylinder, mms_ns or mms_linear",
    "variant": "named parameter set of the case (see cases://case/{id})",
    "nx": "Union Jack cells in x; arc segments for the cylinder mesh",
    "ny": "Union Jack cells in y; background cells across the cylinder channel",
    "mesh_file": "path or URL of a triangle mesh, macro-refined on load",
    "split": "macro refinement of imported meshes: alfeld (3 children) or red (4 children)",
    "mu": "kinematic viscosity (capped at U*h for mms_ns)",
    "gamma": "Smagorinsky coefficient",
    "gamma0": "streamline jump penalty coefficient",
    "gamma1": "Nitsche penalty coefficient on normal-only boundaries",
    "U": "reference velocity scale",
    "sigma": "reaction coefficient of the linear model problem",
    "dt": "time step",
    "t_end": "final time",
    "output_every": "steps between report records",
    "linearization": "advecting field: previous or extrapolated",
    "bc.<tag>": "boundary mode override per tag: strong_dirichlet, normal_only or neumann",
    "output_dir": "output directory (SMAGFEM_OUT overrides)",
    "seed": "random seed",
    "write_vtk": "write VTK snapshots at report records",
    "energy_abort_factor": "abort once kinetic energy exceeds this multiple of the initial energy",
}

# Create MCP server
app = Server("smagfem-mcp")


def _json(payload) -> list[TextContent]:
    return [TextContent(type="text", text=json.dumps(payload, ensure_ascii=False, indent=2))]


def _case_entry(case) -> dict:
    return {
        "id": case.id,
        "title": case.title,
        "kind": case.kind,
        "verification": case.is_verification,
        "periodic": list(case.periodic),
        "boundary_conditions": {tag.value: bc.mode.value for tag, bc in case.bc.items()},
        "defaults": dict(case.defaults),
        "variants": {name: dict(values) for name, values in case.variants.items()},
    }


def _overrides(arguments: dict) -> dict:
    keys = ("variant", "nx", "ny", "mu", "gamma", "gamma0", "gamma1", "dt", "t_end",
            "output_every", "linearization")
    values = {k: arguments[k] for k in keys if arguments.get(k) is not None}
    for k in ("nx", "ny", "output_every"):
        if k in values:
            values[k] = int(values[k])
    return values


# ============================================================================
# MCP RESOURCES
# ============================================================================

@app.list_resources()
async def list_resources() -> list[Resource]:
    """List all available resources."""
    resources = [
        Resource(
            uri="cases://catalog",
            name="Case Catalog",
            description="Built-in benchmark and verification cases with their defaults and variants",
            mimeType="application/json",
        ),
        Resource(
            uri="cases://schema",
            name="Configuration Keys",
            description="Meaning of every run configuration key. Read this before overriding parameters.",
            mimeType="application/json",
        ),
    ]
    for case in CASES.values():
        resources.append(
            Resource(
                uri=f"cases://case/{case.id}",
                name=case.title,
                description=f"{case.kind} case '{case.id}' with its default configuration",
                mimeType="application/json",
            )
        )
    return resources


@app.read_resource()
async def read_resource(uri: str) -> str:
    """Read a specific resource."""
    parsed = urlparse(str(uri))

    if parsed.scheme != "cases":
        raise ValueError(f"Unsupported URI scheme: {parsed.scheme}")

    path = (parsed.netloc + parsed.path).strip("/")

    if path == "catalog":
        return json.dumps({"cases": [_case_entry(c) for c in CASES.values()]}, ensure_ascii=False, indent=2)

    if path == "schema":
        return json.dumps({"title": "smagfem run configuration", "format": "key = value, '#' comments",
                           "keys": CONFIG_SCHEMA}, ensure_ascii=False, indent=2)

    if path.startswith("case/"):
        case = get_case(path.split("/", 1)[1])
        entry = _case_entry(case)
        entry["config"] = serialize_config(config_for_case(case.id))
        return json.dumps(entry, ensure_ascii=False, indent=2)

    raise ValueError(f"Unknown resource path: {path}")


# ============================================================================
# MCP TOOLS
# ============================================================================

_PARAMETER_PROPERTIES = {
    "variant": {"type": "string", "description": "Named variant of the case"},
    "nx": {"type": "number", "description": "Cells in x (or arc segments for the cylinder)"},
    "ny": {"type": "number", "description": "Cells in y"},
    "mu": {"type": "number", "description": "Viscosity"},
    "gamma": {"type": "number", "description": "Smagorinsky coefficient"},
    "gamma0": {"type": "number", "description": "Jump penalty coefficient"},
    "gamma1": {"type": "number", "description": "Nitsche penalty coefficient"},
    "dt": {"type": "number", "description": "Time step"},
    "t_end": {"type": "number", "description": "Final time"},
    "output_every": {"type": "number", "description": "Steps between report records"},
    "linearization": {"type": "string", "enum": ["previous", "extrapolated"]},
}


@app.list_tools()
async def list_tools() -> list[Tool]:
    """List available tools."""
    return [
        Tool(
            name="run_case",
            description="Run a Navier-Stokes case and return the report time series and summary",
            inputSchema={
                "type": "object",
                "properties": {
                    "case": {"type": "string", "description": "Case id", "enum": list(CASES)},
                    **_PARAMETER_PROPERTIES,
                },
                "required": ["case"],
            },
        ),
        Tool(
            name="convergence_study",
            description="Errors and least-squares slopes on a sequence of refined meshes for a verification case",
            inputSchema={
                "type": "object",
                "properties": {
                    "case": {"type": "string", "enum": ["mms_linear", "mms_ns"]},
                    "levels": {"type": "number", "description": "Number of mesh levels (default: 3)"},
                    "base_n": {"type": "number", "description": "Cells per side on the coarsest level (default: 8)"},
                },
                "required": ["case"],
            },
        ),
        Tool(
            name="validate_properties",
            description="Run the randomized property suites of the tensor algebra and assembled forms",
            inputSchema={
                "type": "object",
                "properties": {
                    "seed": {"type": "number", "description": "Random seed (default: 0)"},
                    "quick": {"type": "boolean", "description": "10x fewer samples (default: true)"},
                },
            },
        ),
        Tool(
            name="mesh_info",
            description="Mesh and DOF statistics for a case mesh or a mesh file fetched from a URL",
            inputSchema={
                "type": "object",
                "properties": {
                    "case": {"type": "string", "enum": list(CASES)},
                    "nx": {"type": "number"},
                    "ny": {"type": "number"},
                    "mesh_url": {"type": "string", "description": "http(s) URL of a mesh file"},
                    "split": {"type": "string", "enum": ["alfeld", "red"]},
                },
            },
        ),
    ]


def _check_size(config) -> None:
    if config.n_steps > MAX_STEPS:
        raise ValueError(f"Run of {config.n_steps} steps exceeds the server limit of {MAX_STEPS}")
    if max(config.nx, config.ny) > MAX_CELLS and get_case(config.case).mesh_recipe == "union_jack":
        raise ValueError(f"Mesh of {config.nx}x{config.ny} cells exceeds the server limit of {MAX_CELLS}")


async def _fetch_mesh(url: str, split: str):
    async with httpx.AsyncClient() as client:
        response = await client.get(url, timeout=30.0)
        response.raise_for_status()
    return macro_refine(import_mesh(response.text), split)


@app.call_tool()
async def call_tool(name: str, arguments: dict) -> list[TextContent]:
    """Handle tool calls."""
    arguments = arguments or {}

    if name == "run_case":
        config = config_for_case(arguments["case"], **_overrides(arguments))
        _check_size(config)
        try:
            report = await asyncio.to_thread(run_simulation, config)
        except SmagfemError as e:
            return [TextContent(type="text", text=f"Run failed: {e}")]
        return _json({
            "config": serialize_config(config),
            "summary": report.summary(),
            "records": [{**asdict(r), "flag": r.flag.value} for r in report.records],
        })

    elif name == "convergence_study":
        levels = int(arguments.get("levels", 3))
        base_n = int(arguments.get("base_n", 8))
        if base_n * 2 ** (levels - 1) > MAX_CELLS:
            raise ValueError(f"Finest level exceeds the server limit of {MAX_CELLS} cells per side")
        try:
            study = await asyncio.to_thread(convergence_study, arguments["case"], levels, base_n)
        except SmagfemError as e:
            return [TextContent(type="text", text=f"Study failed: {e}")]
        return _json({
            "case": study.case,
            "rows": [asdict(r) for r in study.rows],
            "slope_l2": study.slope_l2,
            "slope_h1": study.slope_h1,
            "table": study.table(),
        })

    elif name == "validate_properties":
        seed = int(arguments.get("seed", 0))
        quick = bool(arguments.get("quick", True))
        results = await asyncio.to_thread(run_all, seed, quick)
        return _json({
            "passed": all(r.passed for r in results),
            "results": [r.as_dict() for r in results],
        })

    elif name == "mesh_info":
        split = arguments.get("split", "alfeld")
        if arguments.get("mesh_url"):
            try:
                mesh = await _fetch_mesh(arguments["mesh_url"], split)
            except (httpx.HTTPError, SmagfemError) as e:
                return [TextContent(type="text", text=f"Error loading mesh: {str(e)}")]
            return _json({"source": arguments["mesh_url"], "mesh": mesh.summary()})
        case = get_case(arguments.get("case", "shear_layer"))
        config = config_for_case(case.id, **{k: int(arguments[k]) for k in ("nx", "ny") if k in arguments})
        mesh = case.build_mesh(config)
        system = build_system(mesh, case.boundary_conditions(config))
        return _json({
            "case": case.id,
            "mesh": mesh.summary(),
            "velocity_dofs": system.n_velocity,
            "free_velocity_dofs": system.n_free_velocity,
            "pressure_dofs": system.n_pressure,
            "pressure_pinned": system.pressure_pinned is not None,
        })

    else:
        raise ValueError(f"Unknown tool: {name}")


# ============================================================================
# MCP PROMPTS
# ============================================================================

@app.list_prompts()
async def list_prompts() -> list[Prompt]:
    """List all available prompts."""
    return [
        Prompt(
            name="explain_run",
            description="Run a case and interpret its energy, vorticity and stabilization history",
            arguments=[
                {
                    "name": "case",
                    "description": "Case id to run",
                    "required": True,
                },
                {
                    "name": "variant",
                    "description": "Named variant of the case",
                    "required": False,
                },
            ],
        ),
    ]


@app.get_prompt()
async def get_prompt(name: str, arguments: dict) -> GetPromptResult:
    """Generate prompt content."""
    arguments = arguments or {}

    if name == "explain_run":
        case = get_case(arguments.get("case", ""))
        variant = arguments.get("variant")
        label = f"{case.id} ({variant})" if variant else case.id
        entry = json.dumps(_case_entry(case), ensure_ascii=False, indent=2)
        prompt_text = f"""Run the case {label} with the run_case tool and explain the result.

{entry}

Please cover:

1. **Setup**: mesh, boundary conditions, viscosity and stabilization coefficients used.

2. **Energy**: does the kinetic energy decay monotonically? Compare its loss with the accumulated stabilization dissipation.

3. **Vorticity**: how does the maximum vorticity evolve, and are there signs of under-resolved oscillations?

4. **Divergence**: are the weak and pointwise divergence norms at round-off level?

5. **Outcome**: did the run finish or abort with INSTABILITY? If it aborted, which parameter change would you try first?"""

        return GetPromptResult(
            description=f"Explaining run: {label}",
            messages=[
                PromptMessage(
                    role="user",
                    content=TextContent(type="text", text=prompt_text),
                )
            ],
        )

    else:
        raise ValueError(f"Unknown prompt: {name}")


# ============================================================================
# Main entry point
# ============================================================================

async def main():
    """Main entry point for the server."""
    async with stdio_server() as (read_stream, write_stream):
        await app.run(
            read_stream,
            write_stream,
            app.create_initialization_options(),
        )


def run():
    """Run the server."""
    asyncio.run(main())


if __name__ == "__main__":
    run()
