"""Regenerate the Poisson-mechanism proportionality constant stored in qrmsm.simgen.calibration."""

from qrmsm.simgen.calibration import main

if __name__ == "__main__":
    main()
