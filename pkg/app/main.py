# app/main.py
import logging

from fastapi import FastAPI, APIRouter
from fastapi.middleware.cors import CORSMiddleware

# --- Internal Imports ---
from app.core.settings import TOOL_VERSION, configure_logging
from app.middleware.logging_middleware import LoggingMiddleware
from app.routers import linres, meanfield, spectra

# --------------------------------------------------------------------
# 1. Configuration & Setup
# --------------------------------------------------------------------

configure_logging()
root_logger = logging.getLogger()

# --------------------------------------------------------------------
# 2. App Initialization
# --------------------------------------------------------------------

app = FastAPI(
    title="ReservoirForge API",
    description="Mean-field, stability and fluctuation spectra of a parametrically driven "
                "two-mode system with a memory reservoir.",
    version=TOOL_VERSION,
)

# --------------------------------------------------------------------
# 3. Middleware & Routers
# --------------------------------------------------------------------

app.add_middleware(LoggingMiddleware)
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)

api_router = APIRouter()
api_router.include_router(meanfield.router, prefix="/meanfield")
api_router.include_router(linres.router, prefix="/linres")
api_router.include_router(spectra.router, prefix="/spectra")

app.include_router(api_router, prefix="/api/v1")
root_logger.info("ReservoirForge API initialized.")


@app.get("/", tags=["Health Check"])
def read_root():
    """Confirms the API is running."""
    return {"status": "ok", "message": f"Welcome to the ReservoirForge API v{TOOL_VERSION}!"}
