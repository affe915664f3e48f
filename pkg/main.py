import asyncio
import sys
from typing import Optional, Sequence

from cli.command_manager import CommandManager


async def main(argv: Optional[Sequence[str]] = None) -> int:
    command_manager = CommandManager()
    try:
        return await command_manager.run(argv)
    finally:
        await command_manager.cleanup()

if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
