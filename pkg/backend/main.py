# backend/main.py
from __future__ import annotations
import logging
import os
from typing import List

from dotenv import load_dotenv
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

# -------------------------------------------------
# 🌍 Load environment variables on every reload
# -------------------------------------------------
load_dotenv()

# -------------------------------------------------
# 🧠 Logging setup
# -------------------------------------------------
from common.logging_utils import configure_logging  # noqa: E402

configure_logging()
logger = logging.getLogger("main")

from common.config_loader import MAX_VOXELS, SAMPLE_RATE_HZ, SPEED_OF_SOUND_MPS, WORKERS  # noqa: E402


def _parse_allowed_origins() -> List[str]:
    """ALLOWED_ORIGINS from .env (comma separated), or the local dev URLs."""
    origins_env = os.getenv("ALLOWED_ORIGINS", "").strip()
    if origins_env:
        return [o.strip() for o in origins_env.split(",") if o.strip()]
    return ["http://localhost:3000", "http://127.0.0.1:3000", "http://localhost:5173", "http://127.0.0.1:5173"]


ALLOWED_ORIGINS = _parse_allowed_origins()

logger.info("🔐 Acoustic defaults loaded:")
logger.info(f"  sample rate:    {SAMPLE_RATE_HZ:.0f} Hz")
logger.info(f"  speed of sound: {SPEED_OF_SOUND_MPS} m/s")
logger.info(f"  voxel budget:   {MAX_VOXELS}")

# -------------------------------------------------
# ⚙️ FastAPI app setup
# -------------------------------------------------
app = FastAPI(
    title="Pose Kernel Backend",
    version="1.0.0",
    description="Acoustic pose-kernel simulation, spatial encoding and localization.",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# -------------------------------------------------
# 📂 Import route modules after app is initialized
# -------------------------------------------------
from routes import posekernel  # noqa: E402

app.include_router(posekernel.router)


# -------------------------------------------------
# 🧪 Health check endpoint
# -------------------------------------------------
@app.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "version": "1.0.0",
        "defaults": {
            "sample_rate_hz": SAMPLE_RATE_HZ,
            "speed_of_sound_mps": SPEED_OF_SOUND_MPS,
            "max_voxels": MAX_VOXELS,
            "workers": WORKERS,
        },
    }
