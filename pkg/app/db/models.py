from sqlalchemy import Column, Integer, String, Float, DateTime, ForeignKey, Text
from sqlalchemy.orm import declarative_base, relationship
from datetime import datetime

Base = declarative_base()


class SweepRun(Base):
    __tablename__ = "sweep_runs"

    id = Column(Integer, primary_key=True, index=True)
    created_at = Column(DateTime, default=datetime.utcnow)
    objective = Column(String)  # Strategy value, e.g. "plant-fl"
    target = Column(String)
    config_json = Column(Text)  # ExperimentConfig as JSON
    n_rows = Column(Integer, default=0)
    n_skipped = Column(Integer, default=0)

    rows = relationship("SweepRowRecord", back_populates="run", cascade="all, delete-orphan")


class SweepRowRecord(Base):
    __tablename__ = "sweep_rows"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("sweep_runs.id"), index=True)
    seed = Column(Integer)
    # SQLite column names are case-insensitive, so N cannot sit next to n
    N = Column("population", Integer)
    n = Column(Integer)
    n_e = Column(Integer, nullable=True)
    target = Column(String)
    bound = Column(Float)
    bound_clamped = Column(Float)
    delta_tilde = Column(Float)
    success = Column(Float)
    n_cracked = Column(Integer)
    wall_time = Column(Float)

    run = relationship("SweepRun", back_populates="rows")
