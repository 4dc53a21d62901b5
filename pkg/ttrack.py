#!/usr/bin/env python3
from tokentrack.main import main

if __name__ == "__main__":
    main()
