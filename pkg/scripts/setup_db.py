"""Run registry initialization script."""
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from sqlalchemy.exc import SQLAlchemyError

from src.config.settings import get_settings
from src.database.connection import init_db


def main():
    """Initialize registry tables."""
    url = sys.argv[1] if len(sys.argv) > 1 else get_settings().registry_url
    if not url:
        print("✗ No registry URL: pass one as an argument or set DRIFTWATCH_REGISTRY_URL")
        sys.exit(1)

    print(f"Initializing run registry at {url}...")
    try:
        init_db(url)
        print("✓ Registry tables created successfully!")
        print("\nTables created:")
        print("  - model_versions")
        print("  - evaluation_runs")
    except SQLAlchemyError as e:
        print(f"✗ Error initializing registry: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
